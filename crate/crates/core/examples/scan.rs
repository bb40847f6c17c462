//! Radial scan of the meshed feeder reduced to a hexagon.

use adnflex::flex::{radial_scan, reduce_polygon, FlexPolygon, ScanOptions};
use adnflex::model::load_case;

fn main() -> adnflex::Result<()> {
    let case = load_case(concat!(env!("CARGO_MANIFEST_DIR"), "/data/feeder30.json"))?;
    let (base, scan) = radial_scan(&case, &[], &ScanOptions::default())?;
    println!("{} boundary points, {} failed directions", scan.points.len(), scan.failures.len());
    let origin = (base.p_j0, base.q_j0);
    let hull = FlexPolygon::from_points(&scan.coords(), origin)?;
    let hex = reduce_polygon(&scan.coords(), 6, origin)?;
    println!("hull {} vertices, hexagon keeps {:.1}% of its area", hull.vertices.len(), 100.0 * hex.area() / hull.area());
    for ((dp, dq), (a, b)) in hex.vertices.iter().zip(&hex.half_planes) {
        println!("({dp:8.2}, {dq:8.2})  alpha {a:+.5}  beta {b:+.5}");
    }
    Ok(())
}
