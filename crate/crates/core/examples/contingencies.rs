//! Single-branch outage screening ranked by margin.

use adnflex::model::load_case;
use adnflex::vsm::{screen_contingencies, VsmProblemSpec};

fn main() -> adnflex::Result<()> {
    let case = load_case(concat!(env!("CARGO_MANIFEST_DIR"), "/data/mesh5.json"))?;
    let stress = case.stress.clone().expect("mesh5 defines a stress direction");
    let branches: Vec<String> = case.branches.iter().map(|b| b.id.clone()).collect();
    for r in screen_contingencies(&VsmProblemSpec::new(case, stress), &branches) {
        match (r.vsm_mw, r.error) {
            (Some(m), _) => println!("{:>6} {m:8.2} MW", r.branch),
            (None, e) => println!("{:>6} failed: {}", r.branch, e.unwrap_or_default()),
        }
    }
    Ok(())
}
