//! Corner points of the two-bus feeder and the polygon they span.

use adnflex::flex::{corner_points_2bus, corner_polygon, FeederBase};
use adnflex::model::load_case;

fn main() -> adnflex::Result<()> {
    let case = load_case(concat!(env!("CARGO_MANIFEST_DIR"), "/data/two_bus_adn.json"))?;
    let base = FeederBase::new(&case)?;
    let corners = corner_points_2bus(&case)?;
    for c in &corners {
        println!(
            "{} {:>9} {:>9}  dP {:8.2} MW  dQ {:8.2} Mvar  V_d {:.3}  V_g {:.3}  feasible {}",
            c.label, c.binding[0], c.binding[1], c.dp, c.dq, c.v_d, c.v_g, c.feasible
        );
    }
    let poly = corner_polygon(&corners, (base.p_j0, base.q_j0))?;
    println!("area {:.1} MW*Mvar", poly.area());
    print!("{}", poly.to_csv());
    Ok(())
}
