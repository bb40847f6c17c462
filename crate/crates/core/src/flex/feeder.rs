//! Optimal power flow over a distribution feeder seen from its PCC.
//!
//! The feeder slack bus is the PCC behind the LTC: the transformer enters
//! the admittance matrix with unity ratio and the slack magnitude stands for
//! `V_pcc / t`, so a free slack magnitude within the tap range is the LTC
//! control. Decision variables are
//!
//! ```text
//! x = [ e (n) | f (n) | P_g of dispatchable IBGs | Q_g of every IBG ]   (pu)
//! ```
//!
//! Equalities are the power balances of all non-slack buses, `f_slack = 0`
//! and optionally a ray `cos θ ΔQ − sin θ ΔP = 0`. Inequalities are the
//! voltage bounds of non-slack buses, the tap range, the converter current
//! limits `(I S)^2 V^2 − P^2 − Q^2 >= 0`, and any extra constraints supplied
//! through [`ExtraConstraint`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{NetworkCase, Scope};
use crate::nlp::{solve_nlp, NlpOptions, NlpProblem, NlpSolution};
use crate::powerflow::network::radial;
use crate::powerflow::{IbgMode, OperatingPoint, PowerFlow, SlackVoltage};

/// Additional smooth inequality constraints `c(e, f) >= 0` on the feeder
/// voltages, e.g. branch thermal limits.
pub trait ExtraConstraint: Send + Sync {
    fn count(&self) -> usize;
    fn label(&self, i: usize) -> String;
    fn eval(&self, e: &[f64], f: &[f64]) -> Vec<f64>;
    /// `count x 2n` Jacobian with respect to `(e, f)`.
    fn jacobian(&self, e: &[f64], f: &[f64]) -> DMatrix<f64>;
    /// `Σ m_i ∇² c_i` over `(e, f)`.
    fn hessian(&self, e: &[f64], f: &[f64], m: &[f64]) -> DMatrix<f64>;
}

/// Series current limit `|y|^2 |V_a − V_b|^2 <= i_max^2` of a branch
/// (charging neglected), with `i_max` in pu on the feeder base.
#[derive(Clone, Debug)]
pub struct BranchCurrentLimit {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub y2: f64,
    pub i_max: f64,
}

impl BranchCurrentLimit {
    pub fn new(case: &NetworkCase, branch: &str, i_max: f64) -> Result<Self> {
        let br = case
            .branch(branch)
            .ok_or_else(|| Error::UnknownBranch(branch.to_string()))?;
        let idx = case.index_map();
        Ok(Self {
            id: br.id.clone(),
            from: idx[br.from.as_str()],
            to: idx[br.to.as_str()],
            y2: 1.0 / (br.r * br.r + br.x * br.x),
            i_max,
        })
    }
}

impl ExtraConstraint for BranchCurrentLimit {
    fn count(&self) -> usize {
        1
    }

    fn label(&self, _: usize) -> String {
        format!("I_max@{}", self.id)
    }

    fn eval(&self, e: &[f64], f: &[f64]) -> Vec<f64> {
        let (de, df) = (e[self.from] - e[self.to], f[self.from] - f[self.to]);
        vec![self.i_max * self.i_max - self.y2 * (de * de + df * df)]
    }

    fn jacobian(&self, e: &[f64], f: &[f64]) -> DMatrix<f64> {
        let n = e.len();
        let (de, df) = (e[self.from] - e[self.to], f[self.from] - f[self.to]);
        let mut j = DMatrix::zeros(1, 2 * n);
        j[(0, self.from)] = -2.0 * self.y2 * de;
        j[(0, self.to)] = 2.0 * self.y2 * de;
        j[(0, n + self.from)] = -2.0 * self.y2 * df;
        j[(0, n + self.to)] = 2.0 * self.y2 * df;
        j
    }

    fn hessian(&self, e: &[f64], _: &[f64], m: &[f64]) -> DMatrix<f64> {
        let n = e.len();
        let c = -2.0 * self.y2 * m[0];
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        for off in [0, n] {
            let (a, b) = (off + self.from, off + self.to);
            h[(a, a)] += c;
            h[(b, b)] += c;
            h[(a, b)] -= c;
            h[(b, a)] -= c;
        }
        h
    }
}

/// Solved base state of a feeder: LTC holding its setpoint, converters at
/// their scheduled outputs.
#[derive(Clone, Debug)]
pub struct FeederBase {
    pub case: NetworkCase,
    pub pf: PowerFlow,
    pub point: OperatingPoint,
    /// PCC consumption at the base state (MW, Mvar).
    pub p_j0: f64,
    pub q_j0: f64,
    /// HV-side PCC voltage (pu).
    pub v_pcc: f64,
    /// Continuous tap ratio reproducing the base state.
    pub tap0: f64,
    /// Bus regulated by the LTC.
    pub mv_bus: usize,
    pub tap_min: f64,
    pub tap_max: f64,
}

impl FeederBase {
    pub fn new(case: &NetworkCase) -> Result<Self> {
        let mut case = case.clone();
        case.scope = Scope::Feeder;
        let ltc = case.ltc()?.clone();
        let slack = case.slack_index()?;
        if ltc.hv_bus != case.buses[slack].id {
            return Err(Error::InvalidCase(format!(
                "LTC '{}' must connect the PCC slack bus",
                ltc.id
            )));
        }
        let mv_bus = case.bus_index(&ltc.mv_bus).expect("resolved case");
        let mut pf = PowerFlow::new(&case)?;
        pf.slack_voltage = SlackVoltage::Regulate {
            bus: mv_bus,
            v: ltc.v_set,
        };
        let point = pf.solve(&pf.flat_start())?;
        let (p_j0, q_j0) = pf.slack_exchange(&point)?;
        let v_pcc = case.buses[slack].v_set.unwrap_or(1.0);
        let tap0 = v_pcc / point.vm(slack);
        Ok(Self {
            case,
            pf,
            point,
            p_j0,
            q_j0,
            v_pcc,
            tap0,
            mv_bus,
            tap_min: ltc.tap_min,
            tap_max: ltc.tap_max,
        })
    }

    pub fn base_mva(&self) -> f64 {
        self.pf.base_mva
    }

    /// Converter reactive outputs at the base state (Mvar).
    pub fn base_ibg_q(&self) -> Result<Vec<f64>> {
        self.pf.ibg_q(&self.point)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FeederObjective {
    /// Maximize `sign (cos θ ΔP + sin θ ΔQ)` for `dir = (cos θ, sin θ)`.
    Direction { dir: (f64, f64), sign: f64 },
    /// Minimize half the squared PCC distance to `(p_ref, q_ref)` (MW, Mvar)
    /// plus `reg/2` times the squared change of the controls (pu).
    Track { p_ref: f64, q_ref: f64, reg: f64 },
}

/// Feeder OPF instance over a shared base state.
pub struct FeederOpf<'a> {
    base: &'a FeederBase,
    objective: FeederObjective,
    ray: Option<(f64, f64)>,
    extra: &'a [Box<dyn ExtraConstraint>],
    n: usize,
    slack: usize,
    others: Vec<usize>,
    ibg_bus: Vec<usize>,
    ibg_p: Vec<f64>,
    /// Index of the P variable of each converter, if dispatchable.
    disp: Vec<Option<usize>>,
    p_bounds: Vec<(f64, f64)>,
    s_max: Vec<f64>,
    r_slack: (f64, f64),
    x_base: Vec<f64>,
}

impl<'a> FeederOpf<'a> {
    pub fn new(
        base: &'a FeederBase,
        objective: FeederObjective,
        ray: Option<(f64, f64)>,
        extra: &'a [Box<dyn ExtraConstraint>],
    ) -> Result<Self> {
        let pf = &base.pf;
        let n = pf.n();
        let slack = pf.slack;
        let mb = pf.base_mva;
        if pf.ibgs.iter().any(|g| g.bus == slack) {
            return Err(Error::InvalidCase("converter at the PCC slack bus".into()));
        }
        let mut disp = Vec::new();
        let mut p_bounds = Vec::new();
        let mut nd = 0;
        for (g, u) in pf.ibgs.iter().zip(&base.case.ibgs) {
            if u.dispatchable() {
                disp.push(Some(2 * n + nd));
                p_bounds.push((u.p_g_min / mb, u.p_g_max / mb));
                nd += 1;
            } else {
                disp.push(None);
            }
            debug_assert_eq!(g.id, u.id);
        }
        let r_lo = (base.v_pcc / base.tap_max).powi(2);
        let r_hi = (base.v_pcc / base.tap_min).powi(2);
        let mut opf = Self {
            base,
            objective,
            ray,
            extra,
            n,
            slack,
            others: (0..n).filter(|&k| k != slack).collect(),
            ibg_bus: pf.ibgs.iter().map(|g| g.bus).collect(),
            ibg_p: pf.ibgs.iter().map(|g| g.p / mb).collect(),
            disp,
            p_bounds,
            s_max: pf.ibgs.iter().map(|g| g.s_max / mb).collect(),
            r_slack: (r_lo, r_hi),
            x_base: Vec::new(),
        };
        opf.x_base = opf.start_from(&base.point, &base.base_ibg_q()?);
        Ok(opf)
    }

    fn n_disp(&self) -> usize {
        self.p_bounds.len()
    }

    fn n_ibg(&self) -> usize {
        self.ibg_bus.len()
    }

    fn q_index(&self, i: usize) -> usize {
        2 * self.n + self.n_disp() + i
    }

    /// Decision vector for a feeder state with converter outputs in Mvar.
    pub fn start_from(&self, pt: &OperatingPoint, ibg_q: &[f64]) -> Vec<f64> {
        let mb = self.base.base_mva();
        let mut x = Vec::with_capacity(2 * self.n + self.n_disp() + self.n_ibg());
        x.extend_from_slice(&pt.e);
        x.extend_from_slice(&pt.f);
        for (i, d) in self.disp.iter().enumerate() {
            if d.is_some() {
                x.push(self.ibg_p[i]);
            }
        }
        x.extend(ibg_q.iter().map(|q| q / mb));
        x
    }

    pub fn base_start(&self) -> &[f64] {
        &self.x_base
    }

    fn p_of(&self, x: &[f64], i: usize) -> f64 {
        match self.disp[i] {
            Some(k) => x[k],
            None => self.ibg_p[i],
        }
    }

    /// PCC exchange `(P_j, Q_j)` in pu and its gradient over `(e, f)`.
    fn pcc(&self, x: &[f64]) -> (f64, f64, DVector<f64>, DVector<f64>) {
        let n = self.n;
        let s = self.slack;
        let (e, f) = (&x[..n], &x[n..2 * n]);
        let pf = &self.base.pf;
        let (pinj, qinj) = pf.y.injections(e, f);
        let l = pf.bus_loads(e, f, 0.0);
        let j = pf.y.injection_jacobian(e, f);
        let mut gp = DVector::zeros(2 * n);
        let mut gq = DVector::zeros(2 * n);
        for c in 0..2 * n {
            gp[c] = j[(s, c)];
            gq[c] = j[(n + s, c)];
        }
        gp[s] += 2.0 * e[s] * l[s].p1;
        gp[n + s] += 2.0 * f[s] * l[s].p1;
        gq[s] += 2.0 * e[s] * l[s].q1;
        gq[n + s] += 2.0 * f[s] * l[s].q1;
        (pinj[s] + l[s].p, qinj[s] + l[s].q, gp, gq)
    }

    /// Change of PCC consumption `(ΔP, ΔQ)` at a decision vector (MW, Mvar).
    pub fn pcc_change(&self, x: &[f64]) -> (f64, f64) {
        let (p, q, _, _) = self.pcc(x);
        let mb = self.base.base_mva();
        (p * mb - self.base.p_j0, q * mb - self.base.q_j0)
    }

    /// Controls that the tracking regularization ties to the base state.
    fn controls(&self) -> Vec<usize> {
        let mut c = vec![self.slack];
        c.extend(2 * self.n..2 * self.n + self.n_disp() + self.n_ibg());
        c
    }

    /// Labels of the inequality constraints, in row order.
    pub fn ineq_labels(&self) -> Vec<String> {
        let ids = &self.base.case.buses;
        let mut out = Vec::new();
        for &k in &self.others {
            out.push(format!("V_min@{}", ids[k].id));
            out.push(format!("V_max@{}", ids[k].id));
        }
        // a low slack magnitude means a high ratio
        out.push("tap_max".into());
        out.push("tap_min".into());
        for g in &self.base.pf.ibgs {
            out.push(format!("I_max@{}", g.id));
        }
        for c in self.extra {
            for i in 0..c.count() {
                out.push(c.label(i));
            }
        }
        out
    }

    /// Labels of constraints binding at a solution, including converter
    /// active power bounds.
    pub fn binding(&self, sol: &NlpSolution, tol: f64) -> Vec<String> {
        let g = self.ineq(&sol.x);
        let labels = self.ineq_labels();
        let mut out: Vec<String> = g
            .iter()
            .enumerate()
            .filter(|&(j, v)| *v <= tol || sol.active_set.contains(&j))
            .map(|(j, _)| labels[j].clone())
            .collect();
        for (i, d) in self.disp.iter().enumerate() {
            if let Some(k) = *d {
                let (lo, hi) = self.p_bounds[k - 2 * self.n];
                let id = &self.base.pf.ibgs[i].id;
                if sol.x[k] - lo <= tol {
                    out.push(format!("P_min@{id}"));
                }
                if hi - sol.x[k] <= tol {
                    out.push(format!("P_max@{id}"));
                }
            }
        }
        out
    }

    pub fn solve(&self, x0: &[f64], opts: &NlpOptions) -> NlpSolution {
        solve_nlp(self, x0, opts)
    }

    /// Converter outputs `(P, Q)` (MW, Mvar) at a decision vector.
    pub fn ibg_outputs(&self, x: &[f64]) -> Vec<(f64, f64)> {
        let mb = self.base.base_mva();
        (0..self.n_ibg())
            .map(|i| (self.p_of(x, i) * mb, x[self.q_index(i)] * mb))
            .collect()
    }

    /// Feeder operating point with the LTC ratio implied by `x`.
    pub fn point(&self, x: &[f64]) -> OperatingPoint {
        OperatingPoint {
            e: x[..self.n].to_vec(),
            f: x[self.n..2 * self.n].to_vec(),
            delta_l: 0.0,
            lambda: 0.0,
        }
    }

    /// Modes reproducing a decision vector as a power flow: LTC holding the
    /// MV voltage, converters holding their terminal voltages.
    pub fn setpoints(&self, x: &[f64]) -> (f64, Vec<(f64, f64, f64)>) {
        let pt = self.point(x);
        let v_d = pt.vm(self.base.mv_bus);
        let out = self
            .ibg_outputs(x)
            .into_iter()
            .zip(&self.ibg_bus)
            .map(|((p, q), &b)| (pt.vm(b), p, q))
            .collect();
        (v_d, out)
    }

    /// Power-flow model fixed at the controls of `x`.
    pub fn powerflow_at(&self, x: &[f64]) -> PowerFlow {
        let mut pf = self.base.pf.clone();
        let (v_d, outs) = self.setpoints(x);
        pf.slack_voltage = SlackVoltage::Regulate {
            bus: self.base.mv_bus,
            v: v_d,
        };
        for (g, &(v, p, _)) in pf.ibgs.iter_mut().zip(&outs) {
            g.p = p;
            g.mode = IbgMode::Voltage(v);
        }
        pf
    }
}

impl NlpProblem for FeederOpf<'_> {
    fn n(&self) -> usize {
        2 * self.n + self.n_disp() + self.n_ibg()
    }

    fn n_eq(&self) -> usize {
        2 * (self.n - 1) + 1 + usize::from(self.ray.is_some())
    }

    fn n_ineq(&self) -> usize {
        2 * (self.n - 1) + 2 + self.n_ibg() + self.extra.iter().map(|c| c.count()).sum::<usize>()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let nv = NlpProblem::n(self);
        let mut lb = vec![f64::NEG_INFINITY; nv];
        let mut ub = vec![f64::INFINITY; nv];
        for (i, &(lo, hi)) in self.p_bounds.iter().enumerate() {
            lb[2 * self.n + i] = lo;
            ub[2 * self.n + i] = hi;
        }
        (lb, ub)
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let mb = self.base.base_mva();
        let (p, q, _, _) = self.pcc(x);
        match self.objective {
            FeederObjective::Direction { dir, sign } => -sign * (dir.0 * p + dir.1 * q),
            FeederObjective::Track { p_ref, q_ref, reg } => {
                let (dp, dq) = (p - p_ref / mb, q - q_ref / mb);
                let r: f64 = self
                    .controls()
                    .into_iter()
                    .map(|k| (x[k] - self.x_base[k]).powi(2))
                    .sum();
                0.5 * (dp * dp + dq * dq) + 0.5 * reg * r
            }
        }
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let mb = self.base.base_mva();
        let nv = NlpProblem::n(self);
        let (p, q, gp, gq) = self.pcc(x);
        let mut g = DVector::zeros(nv);
        match self.objective {
            FeederObjective::Direction { dir, sign } => {
                let ef = -sign * (dir.0 * gp + dir.1 * gq);
                g.rows_mut(0, 2 * self.n).copy_from(&ef);
            }
            FeederObjective::Track { p_ref, q_ref, reg } => {
                let (dp, dq) = (p - p_ref / mb, q - q_ref / mb);
                g.rows_mut(0, 2 * self.n).copy_from(&(dp * gp + dq * gq));
                for k in self.controls() {
                    g[k] += reg * (x[k] - self.x_base[k]);
                }
            }
        }
        g
    }

    fn eq(&self, x: &[f64]) -> DVector<f64> {
        let n = self.n;
        let (e, f) = (&x[..n], &x[n..2 * n]);
        let pf = &self.base.pf;
        let (pinj, qinj) = pf.y.injections(e, f);
        let l = pf.bus_loads(e, f, 0.0);
        let mut bal_p: Vec<f64> = (0..n).map(|k| pinj[k] + l[k].p).collect();
        let mut bal_q: Vec<f64> = (0..n).map(|k| qinj[k] + l[k].q).collect();
        for (i, &b) in self.ibg_bus.iter().enumerate() {
            bal_p[b] -= self.p_of(x, i);
            bal_q[b] -= x[self.q_index(i)];
        }
        let m = self.others.len();
        let mut c = DVector::zeros(NlpProblem::n_eq(self));
        for (r, &k) in self.others.iter().enumerate() {
            c[r] = bal_p[k];
            c[m + r] = bal_q[k];
        }
        c[2 * m] = f[self.slack];
        if let Some((cs, sn)) = self.ray {
            let (dp, dq) = self.pcc_change(x);
            let mb = self.base.base_mva();
            c[2 * m + 1] = (cs * dq - sn * dp) / mb;
        }
        c
    }

    fn eq_jac(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let (e, f) = (&x[..n], &x[n..2 * n]);
        let pf = &self.base.pf;
        let j = pf.y.injection_jacobian(e, f);
        let l = pf.bus_loads(e, f, 0.0);
        let m = self.others.len();
        let mut out = DMatrix::zeros(NlpProblem::n_eq(self), NlpProblem::n(self));
        for (r, &k) in self.others.iter().enumerate() {
            for c in 0..2 * n {
                out[(r, c)] = j[(k, c)];
                out[(m + r, c)] = j[(n + k, c)];
            }
            out[(r, k)] += 2.0 * e[k] * l[k].p1;
            out[(r, n + k)] += 2.0 * f[k] * l[k].p1;
            out[(m + r, k)] += 2.0 * e[k] * l[k].q1;
            out[(m + r, n + k)] += 2.0 * f[k] * l[k].q1;
        }
        let row_of = |bus: usize| self.others.iter().position(|&k| k == bus).expect("non-slack");
        for (i, &b) in self.ibg_bus.iter().enumerate() {
            let r = row_of(b);
            if let Some(k) = self.disp[i] {
                out[(r, k)] -= 1.0;
            }
            out[(m + r, self.q_index(i))] -= 1.0;
        }
        out[(2 * m, n + self.slack)] = 1.0;
        if let Some((cs, sn)) = self.ray {
            let (_, _, gp, gq) = self.pcc(x);
            for c in 0..2 * n {
                out[(2 * m + 1, c)] = cs * gq[c] - sn * gp[c];
            }
        }
        out
    }

    fn ineq(&self, x: &[f64]) -> DVector<f64> {
        let n = self.n;
        let (e, f) = (&x[..n], &x[n..2 * n]);
        let r = |k: usize| e[k] * e[k] + f[k] * f[k];
        let buses = &self.base.case.buses;
        let mut g = Vec::with_capacity(NlpProblem::n_ineq(self));
        for &k in &self.others {
            g.push(r(k) - buses[k].v_min.powi(2));
            g.push(buses[k].v_max.powi(2) - r(k));
        }
        g.push(r(self.slack) - self.r_slack.0);
        g.push(self.r_slack.1 - r(self.slack));
        for (i, &b) in self.ibg_bus.iter().enumerate() {
            let (p, q) = (self.p_of(x, i), x[self.q_index(i)]);
            g.push(self.s_max[i].powi(2) * r(b) - p * p - q * q);
        }
        for c in self.extra {
            g.extend(c.eval(e, f));
        }
        DVector::from_vec(g)
    }

    fn ineq_jac(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let (e, f) = (&x[..n], &x[n..2 * n]);
        let mut j = DMatrix::zeros(NlpProblem::n_ineq(self), NlpProblem::n(self));
        let mut row = 0;
        for &k in self.others.iter().chain(std::iter::once(&self.slack)) {
            j[(row, k)] = 2.0 * e[k];
            j[(row, n + k)] = 2.0 * f[k];
            j[(row + 1, k)] = -2.0 * e[k];
            j[(row + 1, n + k)] = -2.0 * f[k];
            row += 2;
        }
        for (i, &b) in self.ibg_bus.iter().enumerate() {
            let s2 = self.s_max[i].powi(2);
            j[(row, b)] = 2.0 * s2 * e[b];
            j[(row, n + b)] = 2.0 * s2 * f[b];
            if let Some(k) = self.disp[i] {
                j[(row, k)] = -2.0 * x[k];
            }
            let qi = self.q_index(i);
            j[(row, qi)] = -2.0 * x[qi];
            row += 1;
        }
        for c in self.extra {
            let cj = c.jacobian(e, f);
            for r in 0..c.count() {
                for col in 0..2 * n {
                    j[(row + r, col)] = cj[(r, col)];
                }
            }
            row += c.count();
        }
        j
    }

    fn hessian(&self, x: &[f64], sigma: f64, lambda: &[f64], m: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let s = self.slack;
        let mb = self.base.base_mva();
        let (e, f) = (&x[..n], &x[n..2 * n]);
        let nv = NlpProblem::n(self);
        let mut wp = vec![0.0; n];
        let mut wq = vec![0.0; n];
        let mut wr = vec![0.0; n];
        let nm = self.others.len();
        for (r, &k) in self.others.iter().enumerate() {
            wp[k] += lambda[r];
            wq[k] += lambda[nm + r];
        }
        if let Some((cs, sn)) = self.ray {
            let l = lambda[2 * nm + 1];
            wq[s] += cs * l;
            wp[s] -= sn * l;
        }
        let mut h = DMatrix::zeros(nv, nv);
        match self.objective {
            FeederObjective::Direction { dir, sign } => {
                wp[s] -= sigma * sign * dir.0;
                wq[s] -= sigma * sign * dir.1;
            }
            FeederObjective::Track { p_ref, q_ref, reg } => {
                let (p, q, gp, gq) = self.pcc(x);
                wp[s] += sigma * (p - p_ref / mb);
                wq[s] += sigma * (q - q_ref / mb);
                let outer = sigma * (&gp * gp.transpose() + &gq * gq.transpose());
                h.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&outer);
                for k in self.controls() {
                    h[(k, k)] += sigma * reg;
                }
            }
        }
        let mut row = 0;
        for &k in self.others.iter().chain(std::iter::once(&s)) {
            wr[k] += m[row] - m[row + 1];
            row += 2;
        }
        for (i, &b) in self.ibg_bus.iter().enumerate() {
            wr[b] += m[row] * self.s_max[i].powi(2);
            if let Some(k) = self.disp[i] {
                h[(k, k)] -= 2.0 * m[row];
            }
            let qi = self.q_index(i);
            h[(qi, qi)] -= 2.0 * m[row];
            row += 1;
        }
        let mut ef = self.base.pf.y.weighted_hessian(&wp, &wq);
        let loads = self.base.pf.bus_loads(e, f, 0.0);
        for k in 0..n {
            let d1 = wp[k] * loads[k].p1 + wq[k] * loads[k].q1 + wr[k];
            let d2 = wp[k] * loads[k].p2 + wq[k] * loads[k].q2;
            if d1 == 0.0 && d2 == 0.0 {
                continue;
            }
            let t = radial(e[k], f[k], d1, d2);
            ef[(k, k)] += t.dee;
            ef[(k, n + k)] += t.def;
            ef[(n + k, k)] += t.def;
            ef[(n + k, n + k)] += t.dff;
        }
        for c in self.extra {
            let cnt = c.count();
            ef += c.hessian(e, f, &m[row..row + cnt]);
            row += cnt;
        }
        let mut blk = h.view_mut((0, 0), (2 * n, 2 * n));
        blk += ef;
        h
    }
}

/// Solves a feeder OPF from the base state.
pub fn solve_feeder(
    base: &FeederBase,
    objective: FeederObjective,
    ray: Option<(f64, f64)>,
    extra: &[Box<dyn ExtraConstraint>],
    opts: &NlpOptions,
) -> Result<(NlpSolution, Vec<String>, (f64, f64))> {
    let opf = FeederOpf::new(base, objective, ray, extra)?;
    let sol = opf.solve(opf.base_start(), opts);
    if !sol.is_optimal() {
        return Err(Error::Optimization(sol.diagnostic()));
    }
    let binding = opf.binding(&sol, 1e-6);
    let change = opf.pcc_change(&sol.x);
    Ok((sol, binding, change))
}
