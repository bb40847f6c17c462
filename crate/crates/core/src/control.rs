//! Driving a feeder to a commanded PCC exchange.
//!
//! `track_setpoint` finds the controls that bring the PCC consumption as
//! close as possible to a reference. `qss_simulate` then implements such
//! controls the way a local controller would: the LTC setpoint moves first
//! and the converter voltage setpoints follow as slow ramps once the first
//! tap has moved.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flex::feeder::{FeederBase, FeederObjective, FeederOpf};
use crate::model::NetworkCase;
use crate::nlp::NlpOptions;
use crate::powerflow::{IbgMode, OperatingPoint, PowerFlow, SlackVoltage};

/// Weight tying tracked controls to the base state; small enough to leave
/// the distance unaffected, large enough to pick one optimum when the
/// reference is reachable in many ways.
pub const TRACK_REG: f64 = 0.0;

/// Target PCC consumption (MW, Mvar).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetpointCommand {
    pub p_ref: f64,
    pub q_ref: f64,
}

impl SetpointCommand {
    /// Command offset from the base consumption of `base`.
    pub fn from_delta(base: &FeederBase, dp: f64, dq: f64) -> Self {
        Self {
            p_ref: base.p_j0 + dp,
            q_ref: base.q_j0 + dq,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IbgSetpoint {
    pub id: String,
    pub v: f64,
    pub p_mw: f64,
    pub q_mvar: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrackResult {
    pub cmd: SetpointCommand,
    /// Achieved PCC consumption (MW, Mvar).
    pub p_j: f64,
    pub q_j: f64,
    /// Achieved change from the base consumption.
    pub dp: f64,
    pub dq: f64,
    /// Residual distance to the command (MVA).
    pub distance: f64,
    pub v_d: f64,
    /// Continuous LTC ratio realizing `v_d`.
    pub tap: f64,
    pub ibgs: Vec<IbgSetpoint>,
    pub binding: Vec<String>,
    pub point: OperatingPoint,
}

/// Controls bringing the PCC consumption closest to `cmd`.
pub fn track_setpoint(base: &FeederBase, cmd: SetpointCommand, opts: &NlpOptions) -> Result<TrackResult> {
    let mut opf = track_opf(base, cmd)?;
    let mut sol = opf.solve(opf.base_start(), opts);
    // commands at or just past a sharp vertex of the region are degenerate:
    // the optimum has zero residual with several limits at once and the
    // multipliers are not unique. Commands pulled slightly towards the
    // base state are regular, and the distance below stays relative to
    // the original command.
    for s in SHRINK {
        if sol.is_acceptable() {
            break;
        }
        let pulled = SetpointCommand {
            p_ref: base.p_j0 + s * (cmd.p_ref - base.p_j0),
            q_ref: base.q_j0 + s * (cmd.q_ref - base.q_j0),
        };
        let o = track_opf(base, pulled)?;
        let t = o.solve(o.base_start(), opts);
        if t.is_acceptable() {
            (opf, sol) = (o, t);
        }
    }
    if !sol.is_acceptable() {
        return Err(Error::Optimization(sol.diagnostic()));
    }
    let (dp, dq) = opf.pcc_change(&sol.x);
    let (p_j, q_j) = (base.p_j0 + dp, base.q_j0 + dq);
    let (v_d, outs) = opf.setpoints(&sol.x);
    let point = opf.point(&sol.x);
    let ibgs = base
        .pf
        .ibgs
        .iter()
        .zip(outs)
        .map(|(g, (v, p, q))| IbgSetpoint {
            id: g.id.clone(),
            v,
            p_mw: p,
            q_mvar: q,
        })
        .collect();
    Ok(TrackResult {
        cmd,
        p_j,
        q_j,
        dp,
        dq,
        distance: (cmd.p_ref - p_j).hypot(cmd.q_ref - q_j),
        v_d,
        tap: base.v_pcc / point.vm(base.pf.slack),
        ibgs,
        binding: opf.binding(&sol, 1e-6),
        point,
    })
}

const SHRINK: [f64; 4] = [0.999, 0.995, 0.99, 0.98];

fn track_opf(base: &FeederBase, cmd: SetpointCommand) -> Result<FeederOpf<'_>> {
    let objective = FeederObjective::Track {
        p_ref: cmd.p_ref,
        q_ref: cmd.q_ref,
        reg: TRACK_REG,
    };
    FeederOpf::new(base, objective, None, &[])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LtcSetting {
    pub v_set: f64,
    pub deadband_half: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoltageRamp {
    pub ibg: String,
    /// Final terminal voltage setpoint (pu).
    pub target: f64,
    /// Ramp rate (pu/s), positive.
    pub rate: f64,
    /// Active dispatch applied when the ramp starts (MW).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_mw: Option<f64>,
}

/// Setpoint changes for a feeder: LTC first, converter ramps after its first
/// tap move (immediately when the LTC has nothing to do).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ltc: Option<LtcSetting>,
    #[serde(default)]
    pub ramps: Vec<VoltageRamp>,
}

impl ControlSchedule {
    /// Schedule implementing a tracking result with ramps at `rate`.
    pub fn from_tracking(base: &FeederBase, track: &TrackResult, rate: f64) -> Result<Self> {
        let ltc = base.case.ltc()?;
        Ok(Self {
            ltc: Some(LtcSetting {
                v_set: track.v_d,
                deadband_half: ltc.deadband_half,
            }),
            ramps: track
                .ibgs
                .iter()
                .map(|g| VoltageRamp {
                    ibg: g.id.clone(),
                    target: g.v,
                    rate,
                    p_mw: Some(g.p_mw),
                })
                .collect(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self, case: &NetworkCase) -> Result<()> {
        for r in &self.ramps {
            let Some(u) = case.ibgs.iter().find(|g| g.id == r.ibg) else {
                return Err(Error::InvalidCase(format!("schedule names unknown converter '{}'", r.ibg)));
            };
            if !(r.rate > 0.0) {
                return Err(Error::InvalidCase(format!("ramp of '{}' needs a positive rate", r.ibg)));
            }
            let b = &case.buses[case.bus_index(&u.bus).expect("resolved case")];
            if r.target < b.v_min - 1e-12 || r.target > b.v_max + 1e-12 {
                return Err(Error::InvalidCase(format!(
                    "ramp target {} of '{}' outside [{}, {}]",
                    r.target, r.ibg, b.v_min, b.v_max
                )));
            }
        }
        if let Some(l) = &self.ltc {
            if !(l.deadband_half >= 0.0) || !(l.v_set > 0.0) {
                return Err(Error::InvalidCase("LTC setting needs v_set > 0 and deadband >= 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QssOptions {
    /// Time resolution (s).
    pub dt: f64,
    pub horizon_s: f64,
}

impl Default for QssOptions {
    fn default() -> Self {
        Self {
            dt: 1.0,
            horizon_s: 600.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct QssSample {
    pub t_s: f64,
    /// Tap position relative to the base state; positive raises the ratio
    /// and so lowers the MV voltage.
    pub tap_pos: i32,
    pub tap: f64,
    pub v: Vec<f64>,
    /// Converter `(V, P, Q)` (pu, MW, Mvar).
    pub ibgs: Vec<(f64, f64, f64)>,
    /// Active consumption of each load (MW), in case order.
    pub load_p: Vec<f64>,
    pub p_j: f64,
    pub q_j: f64,
    /// Largest power balance residual (pu).
    pub mismatch: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct QssTrace {
    pub ibg_ids: Vec<String>,
    pub mv_bus: usize,
    pub samples: Vec<QssSample>,
    /// Time the converter ramps started and finished, if they did.
    pub ramp_start_s: Option<f64>,
    pub ramp_end_s: Option<f64>,
    /// The LTC wanted to move past its range.
    pub tap_exhausted: bool,
    /// Time nothing was pending any more.
    pub quiescent_at: Option<f64>,
}

impl QssTrace {
    pub fn first(&self) -> &QssSample {
        &self.samples[0]
    }

    pub fn last(&self) -> &QssSample {
        self.samples.last().expect("traces start with the initial state")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t_s,tap,V_d");
        for id in &self.ibg_ids {
            s.push_str(&format!(",V_g@{id},P_g@{id},Q_g@{id}"));
        }
        s.push_str(",P_j,Q_j\n");
        for smp in &self.samples {
            s.push_str(&format!("{},{:.6},{:.6}", smp.t_s, smp.tap, smp.v[self.mv_bus]));
            for (v, p, q) in &smp.ibgs {
                s.push_str(&format!(",{v:.6},{p:.6},{q:.6}"));
            }
            s.push_str(&format!(",{:.6},{:.6}\n", smp.p_j, smp.q_j));
        }
        s
    }
}

struct Ramp {
    ibg: usize,
    v: f64,
    target: f64,
    step: f64,
    p_mw: Option<f64>,
}

/// Quasi-steady-state response of a feeder to a control schedule.
///
/// Time advances in steps of `opts.dt`. The LTC moves one step when the MV
/// voltage has been outside its deadband for the first delay, then once per
/// subsequent delay while it stays outside. Each ramp moves its converter
/// setpoint by at most `rate dt` per step. A power flow is solved after
/// every event and the simulation stops at the horizon or once nothing is
/// pending.
pub fn qss_simulate(base: &FeederBase, sched: &ControlSchedule, opts: &QssOptions) -> Result<QssTrace> {
    sched.validate(&base.case)?;
    let ltc = base.case.ltc()?;
    let setting = sched.ltc.unwrap_or(LtcSetting {
        v_set: ltc.v_set,
        deadband_half: ltc.deadband_half,
    });
    let (band_lo, band_hi) = (setting.v_set - setting.deadband_half, setting.v_set + setting.deadband_half);
    let mut pf = base.pf.clone();
    let ratio = |pos: i32| base.tap0 + pos as f64 * ltc.tap_step;
    let in_range = |pos: i32| {
        let r = ratio(pos);
        r >= base.tap_min - 1e-12 && r <= base.tap_max + 1e-12
    };
    let mut pos = 0i32;
    pf.slack_voltage = SlackVoltage::Magnitude(base.v_pcc / ratio(pos));
    let mut pt = pf.solve_with_limits(&base.point)?;

    let mut ramps: Vec<Ramp> = sched
        .ramps
        .iter()
        .map(|r| {
            let i = pf.ibgs.iter().position(|g| g.id == r.ibg).expect("validated");
            Ramp {
                ibg: i,
                v: pt.vm(pf.ibgs[i].bus),
                target: r.target,
                step: r.rate * opts.dt,
                p_mw: r.p_mw,
            }
        })
        .collect();
    let mut trace = QssTrace {
        ibg_ids: pf.ibgs.iter().map(|g| g.id.clone()).collect(),
        mv_bus: base.mv_bus,
        samples: vec![sample(&pf, &pt, 0.0, pos, ratio(pos))?],
        ramp_start_s: None,
        ramp_end_s: None,
        tap_exhausted: false,
        quiescent_at: None,
    };

    // time the MV voltage has spent outside the band, and whether a tap
    // has already moved in this excursion
    let mut outside_since: Option<f64> = None;
    let mut moved = false;
    let mut last_move = f64::NEG_INFINITY;
    let mut ramps_on = false;
    let steps = (opts.horizon_s / opts.dt).round() as usize;
    for k in 1..=steps {
        let t = k as f64 * opts.dt;
        let t_prev = t - opts.dt;
        let v_d = pt.vm(base.mv_bus);
        let want = if v_d < band_lo {
            -1
        } else if v_d > band_hi {
            1
        } else {
            0
        };
        let ltc_idle = want == 0 || !in_range(pos + want);
        if want != 0 && !in_range(pos + want) {
            trace.tap_exhausted = true;
        }
        if !ramps_on && (ltc_idle && t_prev == 0.0 || moved) {
            ramps_on = true;
            trace.ramp_start_s = (!ramps.is_empty()).then_some(t_prev);
            for r in &ramps {
                let g = &mut pf.ibgs[r.ibg];
                if let Some(p) = r.p_mw {
                    g.p = p;
                }
                g.mode = IbgMode::Voltage(r.v);
            }
        }
        let ramps_pending = ramps.iter().any(|r| r.v != r.target);
        if ltc_idle && !ramps_pending && ramps_on {
            trace.quiescent_at = Some(t_prev);
            if trace.ramp_end_s.is_none() {
                trace.ramp_end_s = trace.ramp_start_s;
            }
            break;
        }

        let mut event = false;
        if ltc_idle {
            outside_since = None;
        } else {
            let since = *outside_since.get_or_insert(t_prev);
            let delay = if moved { ltc.delay_s } else { ltc.first_delay_s };
            let ready_from = if moved { last_move.max(since) } else { since };
            if t - ready_from >= delay - 1e-9 {
                pos += want;
                moved = true;
                last_move = t;
                pf.slack_voltage = SlackVoltage::Magnitude(base.v_pcc / ratio(pos));
                event = true;
            }
        }
        if ramps_on {
            for r in ramps.iter_mut() {
                if r.v == r.target {
                    continue;
                }
                let gap = r.target - r.v;
                r.v = if gap.abs() <= r.step * (1.0 + 1e-9) {
                    r.target
                } else {
                    r.v + r.step * gap.signum()
                };
                let g = &mut pf.ibgs[r.ibg];
                g.mode = match g.mode {
                    IbgMode::CurrentLimit { sign, .. } => IbgMode::CurrentLimit {
                        sign,
                        v_set: Some(r.v),
                    },
                    _ => IbgMode::Voltage(r.v),
                };
                event = true;
            }
            if trace.ramp_end_s.is_none() && ramps.iter().all(|r| r.v == r.target) {
                trace.ramp_end_s = Some(t);
            }
        }
        if !event {
            continue;
        }
        pt = match pf.solve_with_limits(&pt) {
            Ok(p) => p,
            Err(e) => {
                return Err(Error::TraceAborted {
                    t_s: t,
                    reason: e.to_string(),
                    last: Box::new(trace),
                })
            }
        };
        trace.samples.push(sample(&pf, &pt, t, pos, ratio(pos))?);
    }
    Ok(trace)
}

fn sample(pf: &PowerFlow, pt: &OperatingPoint, t_s: f64, tap_pos: i32, tap: f64) -> Result<QssSample> {
    let (p_j, q_j) = pf.slack_exchange(pt)?;
    let q = pf.ibg_q(pt)?;
    let loads = pf.loads.iter().map(|l| l.p0 * (pt.vm(l.bus) / l.v0).powf(l.a)).collect();
    Ok(QssSample {
        t_s,
        tap_pos,
        tap,
        v: (0..pt.n()).map(|k| pt.vm(k)).collect(),
        ibgs: pf.ibgs.iter().zip(q).map(|(g, q)| (pt.vm(g.bus), g.p, q)).collect(),
        load_p: loads,
        p_j,
        q_j,
        mismatch: pf.residual(pt)?.amax(),
    })
}

/// Load reduction of a voltage-dependent load whose voltage settles at
/// `v_fin` instead of `v_min` (MW). `p_k0` is consumed at `v_d`.
pub fn indirect_shed(p_k0: f64, v_d: f64, v_min: f64, v_fin: f64, a: f64) -> f64 {
    p_k0 / v_d.powf(a) * (v_min.powf(a) - v_fin.powf(a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flex::feeder::tests::TABLE_II;
    use crate::model::parse_case;

    fn base() -> FeederBase {
        FeederBase::new(&parse_case(TABLE_II).unwrap()).unwrap()
    }

    #[test]
    fn shed_arithmetic() {
        assert_eq!(indirect_shed(600.0, 1.0, 0.99, 0.99, 1.0), 0.0);
        assert!((indirect_shed(600.0, 1.0, 0.99, 0.95, 1.0) - 24.0).abs() < 1e-10);
        // quadratic exponent scales with the voltage squared
        let s = indirect_shed(100.0, 1.0, 1.0, 0.9, 2.0);
        assert!((s - 19.0).abs() < 1e-10);
    }

    #[test]
    fn tracking_the_base_point_changes_nothing() {
        let b = base();
        let cmd = SetpointCommand::from_delta(&b, 0.0, 0.0);
        let r = track_setpoint(&b, cmd, &NlpOptions::default()).unwrap();
        assert!(r.distance < 1e-4, "{}", r.distance);
        assert!((r.v_d - 1.0).abs() < 1e-5);
        assert!((r.tap - b.tap0).abs() < 1e-5);
        assert!(r.ibgs[0].q_mvar.abs() < 1e-2);
    }

    #[test]
    fn tracking_reaches_an_interior_command() {
        let b = base();
        let cmd = SetpointCommand::from_delta(&b, 10.0, -20.0);
        let r = track_setpoint(&b, cmd, &NlpOptions::default()).unwrap();
        assert!(r.distance < 1e-3, "{}", r.distance);
        // reproduce the result as a plain power flow
        let mut pf = b.pf.clone();
        pf.slack_voltage = SlackVoltage::Regulate { bus: b.mv_bus, v: r.v_d };
        pf.ibgs[0].mode = IbgMode::Voltage(r.ibgs[0].v);
        let pt = pf.solve(&r.point).unwrap();
        let (p, q) = pf.slack_exchange(&pt).unwrap();
        assert!((p - r.p_j).abs() < 1e-6 && (q - r.q_j).abs() < 1e-6);
    }

    #[test]
    fn noop_schedule_keeps_the_base_state() {
        let b = base();
        let tr = qss_simulate(&b, &ControlSchedule::default(), &QssOptions::default()).unwrap();
        assert_eq!(tr.samples.len(), 1);
        assert_eq!(tr.quiescent_at, Some(0.0));
        assert!((tr.first().p_j - b.p_j0).abs() < 1e-8);
    }

    #[test]
    fn lowering_the_deadband_steps_taps_and_sheds_load() {
        let b = base();
        let sched = ControlSchedule {
            ltc: Some(LtcSetting {
                v_set: 0.95,
                deadband_half: 0.01,
            }),
            ramps: vec![],
        };
        let tr = qss_simulate(&b, &sched, &QssOptions::default()).unwrap();
        let (first, last) = (tr.first(), tr.last());
        assert!(last.tap_pos > 0);
        let v_d = last.v[b.mv_bus];
        assert!((0.94..=0.96).contains(&v_d), "{v_d}");
        assert!(last.p_j < first.p_j);
        // first move after 30 s, then every 10 s
        assert_eq!(tr.samples[1].t_s, 30.0);
        assert_eq!(tr.samples[2].t_s, 40.0);
        for s in &tr.samples {
            assert!(s.mismatch < 1e-8);
        }
        assert!(tr.quiescent_at.is_some() && !tr.tap_exhausted);
    }

    #[test]
    fn ramp_takes_forty_seconds() {
        let b = base();
        let v0 = b.point.vm(b.pf.ibgs[0].bus);
        let sched = ControlSchedule {
            ltc: None,
            ramps: vec![VoltageRamp {
                ibg: "g1".into(),
                target: v0 + 0.02,
                rate: 0.0005,
                p_mw: None,
            }],
        };
        let tr = qss_simulate(&b, &sched, &QssOptions::default()).unwrap();
        assert_eq!(tr.ramp_start_s, Some(0.0));
        assert_eq!(tr.ramp_end_s, Some(40.0));
        assert!((tr.last().ibgs[0].0 - v0 - 0.02).abs() < 1e-9);
    }

    #[test]
    fn schedule_validation() {
        let case = parse_case(TABLE_II).unwrap();
        let bad = ControlSchedule {
            ltc: None,
            ramps: vec![VoltageRamp {
                ibg: "g1".into(),
                target: 1.2,
                rate: 0.001,
                p_mw: None,
            }],
        };
        assert!(bad.validate(&case).is_err());
        let json = r#"{"ltc": {"v_set": 0.97, "deadband_half": 0.01},
                       "ramps": [{"ibg": "g1", "target": 1.03, "rate": 0.0005}]}"#;
        let s = ControlSchedule::from_json(json).unwrap();
        assert!(s.validate(&case).is_ok());
        assert_eq!(s.ramps[0].rate, 0.0005);
    }
}
