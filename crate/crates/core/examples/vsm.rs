//! Voltage stability margin of the corridor with frozen distribution networks.

use adnflex::model::load_case;
use adnflex::vsm::{solve_vsm, VsmProblemSpec};

fn main() -> adnflex::Result<()> {
    let case = load_case(concat!(env!("CARGO_MANIFEST_DIR"), "/data/corridor.json"))?;
    let stress = case.stress.clone().expect("corridor defines a stress direction");
    let sol = solve_vsm(&VsmProblemSpec::new(case, stress))?;
    println!("lambda* {:.4}  margin {:.2} MW  probe {:?}", sol.lambda_star, sol.vsm_mw, sol.probe);
    for g in &sol.gen_report {
        println!("{:>4} P {:7.1} MW  Q {:7.1} Mvar  V {:.3}  limit {:?}", g.id, g.p_mw, g.q_mvar, g.v, g.limit);
    }
    Ok(())
}
