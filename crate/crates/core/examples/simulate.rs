//! Quasi-steady-state response to a lowered LTC setpoint and a converter ramp.

use adnflex::control::{indirect_shed, qss_simulate, ControlSchedule, LtcSetting, QssOptions, VoltageRamp};
use adnflex::flex::FeederBase;
use adnflex::model::load_case;

fn main() -> adnflex::Result<()> {
    let case = load_case(concat!(env!("CARGO_MANIFEST_DIR"), "/data/two_bus_adn.json"))?;
    let base = FeederBase::new(&case)?;
    let ltc = base.case.ltc().expect("feeder has an LTC");
    let ibg = &base.pf.ibgs[0];
    let sched = ControlSchedule {
        ltc: Some(LtcSetting {
            v_set: 0.96,
            deadband_half: ltc.deadband_half,
        }),
        ramps: vec![VoltageRamp {
            ibg: ibg.id.clone(),
            target: base.point.vm(ibg.bus) + 0.02,
            rate: 0.0005,
            p_mw: None,
        }],
    };
    let trace = qss_simulate(&base, &sched, &QssOptions::default())?;
    let (first, last) = (trace.first(), trace.last());
    let load = &base.case.loads[0];
    println!(
        "{} samples, V_d {:.4} -> {:.4}, load {:.2} -> {:.2} MW",
        trace.samples.len(),
        first.v[base.mv_bus],
        last.v[base.mv_bus],
        first.load_p[0],
        last.load_p[0]
    );
    let shed = indirect_shed(load.p0, load.v0, first.v[base.mv_bus], last.v[base.mv_bus], load.a);
    println!("indirect shedding estimate {shed:.2} MW");
    print!("{}", trace.to_csv());
    Ok(())
}
