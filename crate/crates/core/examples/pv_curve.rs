//! PV curve of the corridor traced up to the nose.

use adnflex::model::load_case;
use adnflex::vsm::{pv_curve, PvOptions};

fn main() -> adnflex::Result<()> {
    let case = load_case(concat!(env!("CARGO_MANIFEST_DIR"), "/data/corridor.json"))?;
    let stress = case.stress.clone().expect("corridor defines a stress direction");
    let curve = pv_curve(&case, &stress, &[], &PvOptions::default())?;
    let weakest = (0..case.buses.len())
        .min_by(|&a, &b| curve.points.last().unwrap().v[a].total_cmp(&curve.points.last().unwrap().v[b]))
        .unwrap();
    println!("nose at lambda {:.4} ({:.2} MW), weakest bus {}", curve.lambda_max, curve.vsm_mw, case.buses[weakest].id);
    for p in curve.points.iter().step_by(10) {
        println!("{:8.2} MW  V {:.4}", p.p_mw, p.v[weakest]);
    }
    Ok(())
}
