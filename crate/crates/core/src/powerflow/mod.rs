//! Rectangular-coordinate AC power flow with a distributed slack.
//!
//! Unknowns are the bus voltages `(e, f)` and the loss slack `ΔL`; the stress
//! level `λ` is a parameter. Every source `k` produces
//! `P_k = P_k0 + w_k (ΔL + λ Σ d_p)`, and the extra equation `f_slack = 0`
//! fixes the angle reference so that `ΔL` is determined.
//!
//! Residual layout (`2n + 1` rows): active balance for every bus, then one
//! row per bus that is either a reactive balance or a squared-magnitude
//! equation for voltage-controlled buses, then `f_slack`.
//! Jacobian columns (`2n + 2`): `e`, `f`, `ΔL` (per MW), `λ`.

pub mod network;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::capability::{armature_limit, field_curve, reactive_limit, CapabilityParams, LimitKind};
use crate::error::{Error, Result};
use crate::model::{NetworkCase, Scope, StressDirection};
pub use network::Admittance;
use network::power_law;

/// A (candidate) equilibrium of the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    /// Loss slack shared among sources (MW).
    pub delta_l: f64,
    /// Stress level.
    pub lambda: f64,
}

impl OperatingPoint {
    pub fn flat(n: usize) -> Self {
        Self {
            e: vec![1.0; n],
            f: vec![0.0; n],
            delta_l: 0.0,
            lambda: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.e.len()
    }

    pub fn vm(&self, k: usize) -> f64 {
        self.e[k].hypot(self.f[k])
    }

    pub fn angle_deg(&self, k: usize) -> f64 {
        self.f[k].atan2(self.e[k]).to_degrees()
    }
}

/// Mismatch vector in pu; see the module documentation for the layout.
pub type ResidualVector = DVector<f64>;

/// How the slack bus row is closed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SlackVoltage {
    /// Magnitude held at the slack source reference.
    Source,
    /// Magnitude held at an explicit value.
    Magnitude(f64),
    /// Slack magnitude free; the magnitude of another bus is held instead.
    Regulate { bus: usize, v: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SourceMode {
    Voltage,
    /// Reactive output pinned to its capability limit; `k` is the frozen
    /// saturation factor used by the field limit curve.
    Limited { kind: LimitKind, k: f64 },
}

/// A synchronous machine, or the ideal source behind a feeder slack bus.
#[derive(Clone, Debug)]
pub struct Source {
    pub id: String,
    pub bus: usize,
    /// Scheduled output and limits (MW).
    pub p0: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub w: f64,
    pub v_ref: f64,
    pub caps: Option<CapabilityParams>,
    /// Output held constant after hitting an active limit (MW).
    pub fixed_p: Option<f64>,
    pub mode: SourceMode,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IbgMode {
    /// Constant reactive output (Mvar).
    FixedQ(f64),
    /// Terminal voltage magnitude held.
    Voltage(f64),
    /// Converter current at its limit; `sign` is +1 when producing and -1
    /// when absorbing reactive power. `v_set` is the setpoint to fall back
    /// to once the limit releases.
    CurrentLimit { sign: f64, v_set: Option<f64> },
}

#[derive(Clone, Debug)]
pub struct Ibg {
    pub id: String,
    pub bus: usize,
    /// Active output (MW).
    pub p: f64,
    /// Apparent power limit at 1 pu voltage (MVA).
    pub s_max: f64,
    pub mode: IbgMode,
}

#[derive(Clone, Debug)]
pub(crate) struct Load {
    pub bus: usize,
    pub p0: f64,
    pub q0: f64,
    pub v0: f64,
    pub a: f64,
    pub b: f64,
}

/// Aggregate consumption of an ADN at its PCC, `P_0 + ΔP`, `Q_0 + ΔQ` (MW).
#[derive(Clone, Debug)]
pub struct AdnInjection {
    pub id: String,
    pub bus: usize,
    pub p0: f64,
    pub q0: f64,
    pub dp: f64,
    pub dq: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
            max_halvings: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Row {
    Balance,
    Voltage { bus: usize, v: f64 },
}

/// Per-bus load as a function of `r = |V|^2`: value and first two
/// derivatives in `r`, all in pu.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct BusLoad {
    pub p: f64,
    pub p1: f64,
    pub p2: f64,
    pub q: f64,
    pub q1: f64,
    pub q2: f64,
}

/// Compiled power-flow model of one case.
#[derive(Clone, Debug)]
pub struct PowerFlow {
    pub y: Admittance,
    pub base_mva: f64,
    pub slack: usize,
    pub sources: Vec<Source>,
    pub ibgs: Vec<Ibg>,
    pub(crate) loads: Vec<Load>,
    pub adns: Vec<AdnInjection>,
    /// Stress coefficients per bus (MW, Mvar per unit λ).
    pub stress_p: Vec<f64>,
    pub stress_q: Vec<f64>,
    pub slack_voltage: SlackVoltage,
    pub opts: NewtonOptions,
}

impl PowerFlow {
    pub fn new(case: &NetworkCase) -> Result<Self> {
        let y = Admittance::build(case)?;
        let n = case.buses.len();
        let idx = case.index_map();
        let slack = case.slack_index()?;
        let mut sources: Vec<Source> = case
            .generators
            .iter()
            .map(|g| Source {
                id: g.id.clone(),
                bus: idx[g.bus.as_str()],
                p0: g.p_g0,
                p_min: g.p_min,
                p_max: g.p_max,
                w: g.w,
                v_ref: g.v_ref,
                caps: g.caps.clone(),
                fixed_p: None,
                mode: SourceMode::Voltage,
            })
            .collect();
        if !sources.iter().any(|s| s.bus == slack) {
            let w = if sources.is_empty() { 1.0 } else { 0.0 };
            sources.insert(
                0,
                Source {
                    id: format!("source@{}", case.buses[slack].id),
                    bus: slack,
                    p0: 0.0,
                    p_min: f64::NEG_INFINITY,
                    p_max: f64::INFINITY,
                    w,
                    v_ref: case.buses[slack].v_set.unwrap_or(1.0),
                    caps: None,
                    fixed_p: None,
                    mode: SourceMode::Voltage,
                },
            );
        }
        let ibgs = case
            .ibgs
            .iter()
            .map(|g| Ibg {
                id: g.id.clone(),
                bus: idx[g.bus.as_str()],
                p: g.p_g0,
                s_max: g.i_n * g.s_nom,
                mode: match g.v_set {
                    Some(v) => IbgMode::Voltage(v),
                    None => IbgMode::FixedQ(g.q_g0),
                },
            })
            .collect();
        let voltage_law = case.scope == Scope::Feeder;
        let loads = case
            .loads
            .iter()
            .map(|l| Load {
                bus: idx[l.bus.as_str()],
                p0: l.p0,
                q0: l.q0,
                v0: l.v0,
                a: if voltage_law { l.a } else { 0.0 },
                b: if voltage_law { l.b } else { 0.0 },
            })
            .collect();
        let adns = case
            .adns
            .iter()
            .map(|a| AdnInjection {
                id: a.id.clone(),
                bus: idx[a.pcc_bus.as_str()],
                p0: a.p0,
                q0: a.q0,
                dp: 0.0,
                dq: 0.0,
            })
            .collect();
        let mut pf = Self {
            y,
            base_mva: case.base_mva,
            slack,
            sources,
            ibgs,
            loads,
            adns,
            stress_p: vec![0.0; n],
            stress_q: vec![0.0; n],
            slack_voltage: SlackVoltage::Source,
            opts: NewtonOptions::default(),
        };
        if let Some(dir) = &case.stress {
            pf.set_stress(case, dir)?;
        }
        Ok(pf)
    }

    pub fn n(&self) -> usize {
        self.y.n()
    }

    pub fn set_stress(&mut self, case: &NetworkCase, dir: &StressDirection) -> Result<()> {
        let n = self.n();
        self.stress_p = vec![0.0; n];
        self.stress_q = vec![0.0; n];
        for (bus, v) in &dir.dp {
            let k = case.bus_index(bus).ok_or_else(|| Error::DanglingBus {
                context: "stress".into(),
                bus: bus.clone(),
            })?;
            self.stress_p[k] += v;
        }
        for (bus, v) in &dir.dq {
            let k = case.bus_index(bus).ok_or_else(|| Error::DanglingBus {
                context: "stress".into(),
                bus: bus.clone(),
            })?;
            self.stress_q[k] += v;
        }
        Ok(())
    }

    /// Sets `(ΔP_j, ΔQ_j)` of every ADN, in case order (MW, Mvar).
    pub fn set_adjustments(&mut self, adj: &[(f64, f64)]) -> Result<()> {
        if adj.len() != self.adns.len() {
            return Err(Error::Dimension {
                expected: self.adns.len(),
                got: adj.len(),
            });
        }
        for (a, &(dp, dq)) in self.adns.iter_mut().zip(adj) {
            a.dp = dp;
            a.dq = dq;
        }
        Ok(())
    }

    pub fn total_stress(&self) -> f64 {
        self.stress_p.iter().sum()
    }

    /// Index of the source closing the slack bus.
    pub fn slack_source(&self) -> usize {
        self.sources
            .iter()
            .position(|s| s.bus == self.slack)
            .expect("slack bus always has a source")
    }

    /// Participation factors renormalized over sources whose output is not
    /// held at a limit.
    pub fn weights(&self) -> Result<Vec<f64>> {
        let sum: f64 = self
            .sources
            .iter()
            .filter(|s| s.fixed_p.is_none())
            .map(|s| s.w)
            .sum();
        if !(sum > 0.0) {
            return Err(Error::NoSlackCapacity);
        }
        Ok(self
            .sources
            .iter()
            .map(|s| if s.fixed_p.is_none() { s.w / sum } else { 0.0 })
            .collect())
    }

    /// Active output of every source at a point (MW).
    pub fn source_p(&self, pt: &OperatingPoint) -> Result<Vec<f64>> {
        let w = self.weights()?;
        let shift = pt.delta_l + pt.lambda * self.total_stress();
        Ok(self
            .sources
            .iter()
            .zip(&w)
            .map(|(s, w)| s.fixed_p.unwrap_or(s.p0 + w * shift))
            .collect())
    }

    pub(crate) fn bus_loads(&self, e: &[f64], f: &[f64], lambda: f64) -> Vec<BusLoad> {
        let base = self.base_mva;
        let mut out = vec![BusLoad::default(); self.n()];
        for l in &self.loads {
            let r = e[l.bus] * e[l.bus] + f[l.bus] * f[l.bus];
            let v02 = l.v0 * l.v0;
            let (p, p1, p2) = power_law(l.p0 / base / v02.powf(l.a / 2.0), l.a / 2.0, r);
            let (q, q1, q2) = power_law(l.q0 / base / v02.powf(l.b / 2.0), l.b / 2.0, r);
            let t = &mut out[l.bus];
            t.p += p;
            t.p1 += p1;
            t.p2 += p2;
            t.q += q;
            t.q1 += q1;
            t.q2 += q2;
        }
        for a in &self.adns {
            out[a.bus].p += (a.p0 + a.dp) / base;
            out[a.bus].q += (a.q0 + a.dq) / base;
        }
        for (k, t) in out.iter_mut().enumerate() {
            t.p += lambda * self.stress_p[k] / base;
            t.q += lambda * self.stress_q[k] / base;
        }
        out
    }

    fn rows(&self) -> Result<Vec<Row>> {
        let n = self.n();
        let mut rows = vec![Row::Balance; n];
        let claim = |rows: &mut Vec<Row>, bus: usize, v: f64, who: &str| -> Result<()> {
            match rows[bus] {
                Row::Balance => {
                    rows[bus] = Row::Voltage { bus, v };
                    Ok(())
                }
                Row::Voltage { v: held, .. } if (held - v).abs() < 1e-12 => Ok(()),
                Row::Voltage { .. } => Err(Error::InvalidCase(format!(
                    "conflicting voltage setpoints at bus {bus} ({who})"
                ))),
            }
        };
        for s in &self.sources {
            if s.bus != self.slack && s.mode == SourceMode::Voltage {
                claim(&mut rows, s.bus, s.v_ref, &s.id)?;
            }
        }
        for g in &self.ibgs {
            if let IbgMode::Voltage(v) = g.mode {
                if g.bus != self.slack {
                    claim(&mut rows, g.bus, v, &g.id)?;
                }
            }
        }
        let slack_row = match self.slack_voltage {
            SlackVoltage::Source => Row::Voltage {
                bus: self.slack,
                v: self.sources[self.slack_source()].v_ref,
            },
            SlackVoltage::Magnitude(v) => Row::Voltage { bus: self.slack, v },
            SlackVoltage::Regulate { bus, v } => {
                if rows[bus] != Row::Balance {
                    return Err(Error::InvalidCase(format!(
                        "bus {bus} is already voltage controlled"
                    )));
                }
                Row::Voltage { bus, v }
            }
        };
        rows[self.slack] = slack_row;
        Ok(rows)
    }

    fn check_dims(&self, pt: &OperatingPoint) -> Result<()> {
        let n = self.n();
        for len in [pt.e.len(), pt.f.len()] {
            if len != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: len,
                });
            }
        }
        Ok(())
    }

    /// Evaluates the residual and, on request, its Jacobian.
    fn eval(&self, pt: &OperatingPoint, want_jac: bool) -> Result<(ResidualVector, Option<DMatrix<f64>>)> {
        self.check_dims(pt)?;
        let n = self.n();
        let base = self.base_mva;
        let (e, f) = (&pt.e, &pt.f);
        let rows = self.rows()?;
        let w = self.weights()?;
        let s_tot = self.total_stress();
        let p_src = self.source_p(pt)?;
        let (pinj, qinj) = self.y.injections(e, f);
        let loads = self.bus_loads(e, f, pt.lambda);

        let mut res = DVector::zeros(2 * n + 1);
        let mut jac = want_jac.then(|| {
            let mut j = DMatrix::zeros(2 * n + 1, 2 * n + 2);
            j.view_mut((0, 0), (2 * n, 2 * n))
                .copy_from(&self.y.injection_jacobian(e, f));
            j
        });

        for k in 0..n {
            res[k] = pinj[k] + loads[k].p;
            if let Some(j) = jac.as_mut() {
                j[(k, k)] += 2.0 * e[k] * loads[k].p1;
                j[(k, n + k)] += 2.0 * f[k] * loads[k].p1;
                j[(k, 2 * n + 1)] += self.stress_p[k] / base;
            }
        }
        for (i, s) in self.sources.iter().enumerate() {
            res[s.bus] -= p_src[i] / base;
            if let Some(j) = jac.as_mut() {
                j[(s.bus, 2 * n)] -= w[i] / base;
                j[(s.bus, 2 * n + 1)] -= w[i] * s_tot / base;
            }
        }
        for g in &self.ibgs {
            res[g.bus] -= g.p / base;
        }

        for k in 0..n {
            let row = n + k;
            match rows[k] {
                Row::Voltage { bus, v } => {
                    res[row] = e[bus] * e[bus] + f[bus] * f[bus] - v * v;
                    if let Some(j) = jac.as_mut() {
                        j.row_mut(row).fill(0.0);
                        j[(row, bus)] = 2.0 * e[bus];
                        j[(row, n + bus)] = 2.0 * f[bus];
                    }
                }
                Row::Balance => {
                    res[row] = qinj[k] + loads[k].q;
                    if let Some(j) = jac.as_mut() {
                        j[(row, k)] += 2.0 * e[k] * loads[k].q1;
                        j[(row, n + k)] += 2.0 * f[k] * loads[k].q1;
                        j[(row, 2 * n + 1)] += self.stress_q[k] / base;
                    }
                }
            }
        }
        for (i, s) in self.sources.iter().enumerate() {
            let SourceMode::Limited { kind, k: ksat } = s.mode else {
                continue;
            };
            if rows[s.bus] != Row::Balance {
                continue;
            }
            let caps = s.caps.as_ref().ok_or_else(|| {
                Error::InvalidCase(format!("source '{}' is limited without capability data", s.id))
            })?;
            let r = e[s.bus] * e[s.bus] + f[s.bus] * f[s.bus];
            let (q, dq_dr, dq_dp) = limit_curve(caps, kind, ksat, p_src[i], r)?;
            let row = n + s.bus;
            res[row] -= q / base;
            if let Some(j) = jac.as_mut() {
                j[(row, s.bus)] -= 2.0 * e[s.bus] * dq_dr / base;
                j[(row, n + s.bus)] -= 2.0 * f[s.bus] * dq_dr / base;
                if s.fixed_p.is_none() {
                    j[(row, 2 * n)] -= dq_dp * w[i] / base;
                    j[(row, 2 * n + 1)] -= dq_dp * w[i] * s_tot / base;
                }
            }
        }
        for g in &self.ibgs {
            if rows[g.bus] != Row::Balance {
                continue;
            }
            let row = n + g.bus;
            match g.mode {
                IbgMode::FixedQ(q) => res[row] -= q / base,
                IbgMode::CurrentLimit { sign, .. } => {
                    let r = e[g.bus] * e[g.bus] + f[g.bus] * f[g.bus];
                    let (s2, p2) = ((g.s_max / base).powi(2), (g.p / base).powi(2));
                    let rem = (s2 * r - p2).max(1e-12);
                    let q = sign * rem.sqrt();
                    res[row] -= q;
                    if let Some(j) = jac.as_mut() {
                        let dq_dr = sign * s2 / (2.0 * rem.sqrt());
                        j[(row, g.bus)] -= 2.0 * e[g.bus] * dq_dr;
                        j[(row, n + g.bus)] -= 2.0 * f[g.bus] * dq_dr;
                    }
                }
                IbgMode::Voltage(_) => {}
            }
        }
        res[2 * n] = f[self.slack];
        if let Some(j) = jac.as_mut() {
            j[(2 * n, n + self.slack)] = 1.0;
        }
        Ok((res, jac))
    }

    pub fn residual(&self, pt: &OperatingPoint) -> Result<ResidualVector> {
        Ok(self.eval(pt, false)?.0)
    }

    /// `d residual / d(e, f, ΔL, λ)`, a `(2n+1) x (2n+2)` matrix.
    pub fn jacobian(&self, pt: &OperatingPoint) -> Result<DMatrix<f64>> {
        Ok(self.eval(pt, true)?.1.expect("requested"))
    }

    /// Damped Newton solve for `(e, f, ΔL)` at the stress level of `start`.
    pub fn solve(&self, start: &OperatingPoint) -> Result<OperatingPoint> {
        let n = self.n();
        let mut pt = start.clone();
        let (mut res, mut jac) = self.eval(&pt, true)?;
        let mut norm = res.amax();
        for _ in 0..self.opts.max_iter {
            if norm <= self.opts.tol {
                return Ok(pt);
            }
            let j = jac.expect("requested").columns(0, 2 * n + 1).into_owned();
            let Some(dz) = j.lu().solve(&(-&res)) else {
                return Err(Error::NonConvergence {
                    iterations: 0,
                    mismatch: norm,
                });
            };
            let mut alpha = 1.0;
            let mut trial;
            let mut halvings = 0;
            loop {
                trial = step(&pt, &dz, alpha);
                let r = self.residual(&trial)?;
                let tn = r.amax();
                if (tn.is_finite() && tn < norm) || halvings == self.opts.max_halvings {
                    break;
                }
                alpha *= 0.5;
                halvings += 1;
            }
            pt = trial;
            (res, jac) = self.eval(&pt, true)?;
            norm = res.amax();
            if !norm.is_finite() {
                break;
            }
        }
        if norm <= self.opts.tol {
            return Ok(pt);
        }
        Err(Error::NonConvergence {
            iterations: self.opts.max_iter,
            mismatch: norm,
        })
    }

    /// Solves while switching sources and converters onto their limits.
    ///
    /// Voltage-controlled machines exceeding their reactive capability are
    /// pinned to it (and released when the voltage would rise above the
    /// reference); machines exceeding `p_max` are held there with the
    /// participation renormalized over the rest. Converters exceeding their
    /// current limit are pinned to it likewise.
    pub fn solve_with_limits(&mut self, start: &OperatingPoint) -> Result<OperatingPoint> {
        let mut pt = start.clone();
        for _ in 0..30 {
            pt = self.solve(&pt)?;
            if !self.update_limits(&pt)? {
                return Ok(pt);
            }
        }
        Err(Error::Infeasible("limit switching did not settle".into()))
    }

    /// Applies one round of limit switching; true when anything changed.
    pub fn update_limits(&mut self, pt: &OperatingPoint) -> Result<bool> {
        let mut changed = false;
        let p = self.source_p(pt)?;
        let q = self.source_q(pt)?;
        let slack_src = self.slack_source();
        for (s, &pi) in self.sources.iter_mut().zip(p.iter()) {
            if s.fixed_p.is_none() && (pi > s.p_max + 1e-9 || pi < s.p_min - 1e-9) {
                s.fixed_p = Some(pi.clamp(s.p_min, s.p_max));
                changed = true;
            }
        }
        if changed {
            self.weights()?;
        }
        for (i, &q_g) in q.iter().enumerate() {
            if i == slack_src {
                continue;
            }
            let s = &self.sources[i];
            let Some(caps) = s.caps.as_ref() else { continue };
            let v = pt.vm(s.bus);
            match s.mode {
                SourceMode::Voltage => {
                    let (q_lim, kind, k) = reactive_limit(caps, p[i], v)?;
                    if q_g > q_lim + 1e-9 * q_lim.abs().max(1.0) {
                        self.sources[i].mode = SourceMode::Limited { kind, k };
                        changed = true;
                    }
                }
                SourceMode::Limited { kind, k } => {
                    if v > s.v_ref + 1e-10 {
                        self.sources[i].mode = SourceMode::Voltage;
                        changed = true;
                        continue;
                    }
                    let (_, new_kind, new_k) = reactive_limit(caps, p[i], v)?;
                    if new_kind != kind || (new_k - k).abs() > 1e-10 {
                        self.sources[i].mode = SourceMode::Limited {
                            kind: new_kind,
                            k: new_k,
                        };
                        changed = true;
                    }
                }
            }
        }
        let ibg_q = self.ibg_q(pt)?;
        for (g, q_g) in self.ibgs.iter_mut().zip(ibg_q) {
            let v = pt.vm(g.bus);
            let lim2 = (g.s_max * v).powi(2) - g.p * g.p;
            match g.mode {
                IbgMode::Voltage(v_set) if q_g * q_g > lim2.max(0.0) * (1.0 + 1e-9) + 1e-12 => {
                    g.mode = IbgMode::CurrentLimit {
                        sign: q_g.signum(),
                        v_set: Some(v_set),
                    };
                    changed = true;
                }
                IbgMode::CurrentLimit {
                    sign,
                    v_set: Some(v_set),
                } if (sign > 0.0 && v > v_set + 1e-10) || (sign < 0.0 && v < v_set - 1e-10) => {
                    g.mode = IbgMode::Voltage(v_set);
                    changed = true;
                }
                _ => {}
            }
        }
        Ok(changed)
    }

    /// Reactive output of every source (Mvar). Voltage-controlled buses
    /// share the residual reactive demand equally among their regulators.
    pub fn source_q(&self, pt: &OperatingPoint) -> Result<Vec<f64>> {
        let (per_src, _) = self.reactive_split(pt)?;
        Ok(per_src)
    }

    /// Reactive output of every converter (Mvar).
    pub fn ibg_q(&self, pt: &OperatingPoint) -> Result<Vec<f64>> {
        let (_, per_ibg) = self.reactive_split(pt)?;
        Ok(per_ibg)
    }

    fn reactive_split(&self, pt: &OperatingPoint) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_dims(pt)?;
        let n = self.n();
        let base = self.base_mva;
        let (_, qinj) = self.y.injections(&pt.e, &pt.f);
        let loads = self.bus_loads(&pt.e, &pt.f, pt.lambda);
        let p = self.source_p(pt)?;
        // reactive demand each bus places on its devices
        let mut demand: Vec<f64> = (0..n).map(|k| (qinj[k] + loads[k].q) * base).collect();
        let mut src_q = vec![f64::NAN; self.sources.len()];
        let mut ibg_q = vec![f64::NAN; self.ibgs.len()];
        let mut free = vec![0usize; n];
        for (i, s) in self.sources.iter().enumerate() {
            match s.mode {
                SourceMode::Limited { kind, k } if s.bus != self.slack => {
                    let caps = s.caps.as_ref().expect("limited sources carry capability data");
                    let (q, _, _) = limit_curve(caps, kind, k, p[i], pt.vm(s.bus).powi(2))?;
                    src_q[i] = q;
                    demand[s.bus] -= q;
                }
                _ => free[s.bus] += 1,
            }
        }
        for (i, g) in self.ibgs.iter().enumerate() {
            let q = match g.mode {
                IbgMode::FixedQ(q) => Some(q),
                IbgMode::CurrentLimit { sign, .. } => {
                    let v = pt.vm(g.bus);
                    Some(sign * ((g.s_max * v).powi(2) - g.p * g.p).max(0.0).sqrt())
                }
                IbgMode::Voltage(_) => None,
            };
            match q {
                Some(q) => {
                    ibg_q[i] = q;
                    demand[g.bus] -= q;
                }
                None => free[g.bus] += 1,
            }
        }
        for (i, s) in self.sources.iter().enumerate() {
            if src_q[i].is_nan() {
                src_q[i] = demand[s.bus] / free[s.bus] as f64;
            }
        }
        for (i, g) in self.ibgs.iter().enumerate() {
            if ibg_q[i].is_nan() {
                ibg_q[i] = demand[g.bus] / free[g.bus] as f64;
            }
        }
        Ok((src_q, ibg_q))
    }

    /// Power delivered by the slack source (MW, Mvar); for a feeder this is
    /// the consumption seen at the PCC.
    pub fn slack_exchange(&self, pt: &OperatingPoint) -> Result<(f64, f64)> {
        let i = self.slack_source();
        Ok((self.source_p(pt)?[i], self.source_q(pt)?[i]))
    }

    /// Active and reactive losses in all branches (MW, Mvar).
    pub fn losses(&self, pt: &OperatingPoint) -> (f64, f64) {
        let (p, q) = self.y.injections(&pt.e, &pt.f);
        (p.iter().sum::<f64>() * self.base_mva, q.iter().sum::<f64>() * self.base_mva)
    }

    /// Total consumption of loads, ADNs and stress (MW).
    pub fn total_load(&self, pt: &OperatingPoint) -> f64 {
        self.bus_loads(&pt.e, &pt.f, pt.lambda)
            .iter()
            .map(|l| l.p)
            .sum::<f64>()
            * self.base_mva
    }

    /// Total generation of sources and converters (MW).
    pub fn total_generation(&self, pt: &OperatingPoint) -> Result<f64> {
        Ok(self.source_p(pt)?.iter().sum::<f64>() + self.ibgs.iter().map(|g| g.p).sum::<f64>())
    }

    /// A flat start with the slack magnitude already applied.
    pub fn flat_start(&self) -> OperatingPoint {
        let mut pt = OperatingPoint::flat(self.n());
        for s in &self.sources {
            pt.e[s.bus] = s.v_ref;
        }
        for g in &self.ibgs {
            if let IbgMode::Voltage(v) = g.mode {
                pt.e[g.bus] = v;
            }
        }
        match self.slack_voltage {
            SlackVoltage::Source => {}
            SlackVoltage::Magnitude(v) => pt.e[self.slack] = v,
            SlackVoltage::Regulate { bus, v } => pt.e[bus] = v,
        }
        pt
    }
}

fn step(pt: &OperatingPoint, dz: &DVector<f64>, alpha: f64) -> OperatingPoint {
    let n = pt.n();
    let mut out = pt.clone();
    for k in 0..n {
        out.e[k] += alpha * dz[k];
        out.f[k] += alpha * dz[n + k];
    }
    out.delta_l += alpha * dz[2 * n];
    out
}

/// Reactive capability `q(P, r)` (Mvar) with `dq/dr` and `dq/dP`, where
/// `r` is the squared terminal voltage.
pub(crate) fn limit_curve(
    caps: &CapabilityParams,
    kind: LimitKind,
    k: f64,
    p: f64,
    r: f64,
) -> Result<(f64, f64, f64)> {
    match kind {
        LimitKind::Armature => {
            let i2 = caps.i_n().powi(2);
            let q = armature_limit(caps, p, r.sqrt())?.max(1e-9);
            Ok((q, i2 / (2.0 * q), -p / q))
        }
        LimitKind::Field => {
            let v = r.sqrt();
            let c = field_curve(caps, k, p, v)?;
            Ok((c.q, c.dq_dv / (2.0 * v), c.dq_dp))
        }
    }
}

/// Residual of a case at a point.
pub fn residual(case: &NetworkCase, pt: &OperatingPoint) -> Result<ResidualVector> {
    PowerFlow::new(case)?.residual(pt)
}

/// Jacobian of the residual of a case at a point.
pub fn jacobian(case: &NetworkCase, pt: &OperatingPoint) -> Result<DMatrix<f64>> {
    PowerFlow::new(case)?.jacobian(pt)
}

/// Newton power flow at the stress level of `start` with the given ADN
/// adjustments (MW, Mvar, case order).
pub fn solve_powerflow(
    case: &NetworkCase,
    start: &OperatingPoint,
    adjustments: &[(f64, f64)],
) -> Result<OperatingPoint> {
    let mut pf = PowerFlow::new(case)?;
    if !adjustments.is_empty() {
        pf.set_adjustments(adjustments)?;
    }
    pf.solve(start)
}

/// Bus consumption under stress (MW, Mvar per bus).
#[derive(Clone, Debug, PartialEq)]
pub struct BusInjections {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

/// Nominal consumption of every bus at stress level `λ`, including ADN
/// exchanges shifted by their adjustments.
pub fn apply_stress(
    case: &NetworkCase,
    dir: &StressDirection,
    lambda: f64,
    adjustments: &[(f64, f64)],
) -> Result<BusInjections> {
    let n = case.buses.len();
    let idx = case.index_map();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for l in &case.loads {
        p[idx[l.bus.as_str()]] += l.p0;
        q[idx[l.bus.as_str()]] += l.q0;
    }
    if !adjustments.is_empty() && adjustments.len() != case.adns.len() {
        return Err(Error::Dimension {
            expected: case.adns.len(),
            got: adjustments.len(),
        });
    }
    for (i, a) in case.adns.iter().enumerate() {
        let (dp, dq) = adjustments.get(i).copied().unwrap_or((0.0, 0.0));
        p[idx[a.pcc_bus.as_str()]] += a.p0 + dp;
        q[idx[a.pcc_bus.as_str()]] += a.q0 + dq;
    }
    for (bus, d) in &dir.dp {
        let k = *idx.get(bus.as_str()).ok_or_else(|| Error::DanglingBus {
            context: "stress".into(),
            bus: bus.clone(),
        })?;
        p[k] += lambda * d;
    }
    for (bus, d) in &dir.dq {
        let k = *idx.get(bus.as_str()).ok_or_else(|| Error::DanglingBus {
            context: "stress".into(),
            bus: bus.clone(),
        })?;
        q[k] += lambda * d;
    }
    Ok(BusInjections { p, q })
}

/// Change of output of every generator, `w_k (ΔL + ΔP)` with the factors
/// renormalized over the generators not listed in `limited` (MW).
pub fn generation_shift(case: &NetworkCase, dp: f64, dl: f64, limited: &[&str]) -> Result<Vec<f64>> {
    let free = |id: &str| !limited.contains(&id);
    let sum: f64 = case
        .generators
        .iter()
        .filter(|g| free(&g.id))
        .map(|g| g.w)
        .sum();
    if !(sum > 0.0) {
        return Err(Error::NoSlackCapacity);
    }
    Ok(case
        .generators
        .iter()
        .map(|g| if free(&g.id) { g.w / sum * (dl + dp) } else { 0.0 })
        .collect())
}
