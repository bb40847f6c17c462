//! Margin gained when each distribution network may move inside its polygon.

use adnflex::flex::{corner_points_2bus, corner_polygon, FeederBase};
use adnflex::model::load_case;
use adnflex::vsm::{solve_vsm, solve_vsm_flex, VsmProblemSpec};

fn main() -> adnflex::Result<()> {
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/data");
    let feeder = load_case(format!("{data}/two_bus_adn.json"))?;
    let base = FeederBase::new(&feeder)?;
    let poly = corner_polygon(&corner_points_2bus(&feeder)?, (base.p_j0, base.q_j0))?;

    let case = load_case(format!("{data}/corridor.json"))?;
    let stress = case.stress.clone().expect("corridor defines a stress direction");
    let frozen = solve_vsm(&VsmProblemSpec::new(case.clone(), stress.clone()))?;
    let polys = vec![poly; case.adns.len()];
    let flex = solve_vsm_flex(&case, &stress, polys)?;
    println!("frozen {:.2} MW, flexible {:.2} MW", frozen.vsm_mw, flex.vsm_mw);
    for (adn, ((dp, dq), edges)) in case.adns.iter().zip(flex.adn_adjustments.iter().zip(&flex.binding_fr_constraints)) {
        println!("{:>4} dP {dp:7.2} MW  dQ {dq:7.2} Mvar  binding edges {edges:?}", adn.id);
    }
    Ok(())
}
