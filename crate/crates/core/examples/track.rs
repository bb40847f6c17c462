//! Setpoints that bring the PCC consumption closest to a requested change.

use adnflex::control::{track_setpoint, SetpointCommand};
use adnflex::flex::FeederBase;
use adnflex::model::load_case;
use adnflex::nlp::NlpOptions;

fn main() -> adnflex::Result<()> {
    let case = load_case(concat!(env!("CARGO_MANIFEST_DIR"), "/data/two_bus_adn.json"))?;
    let base = FeederBase::new(&case)?;
    for (dp, dq) in [(40.0, 150.0), (-30.0, -120.0), (0.0, 500.0)] {
        let r = track_setpoint(&base, SetpointCommand::from_delta(&base, dp, dq), &NlpOptions::default())?;
        println!(
            "ask ({dp:6.1}, {dq:6.1})  got ({:7.2}, {:7.2})  miss {:7.3} MVA  V_d {:.4}  tap {:.4}  binding {:?}",
            r.dp, r.dq, r.distance, r.v_d, r.tap, r.binding
        );
    }
    Ok(())
}
