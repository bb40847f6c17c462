//! Voltage stability margin of a transmission system by optimal power flow.
//!
//! The loadability problem maximizes the stress level `λ` along a direction
//! subject to the power flow equations with a distributed slack. Variables
//! are
//!
//! ```text
//! x = [ e (n) | f (n) | ΔL | λ | Q of every source | ΔP_j, ΔQ_j per ADN ]   (pu)
//! ```
//!
//! Every source holds its voltage at or below its reference and, when it
//! carries capability data, its reactive output below the armature and field
//! limits. The saturation factor of the field limit is frozen in the NLP and
//! updated between solves; active power limits are enforced the same way by
//! fixing the offending outputs and renormalizing the participation.

use nalgebra::{DMatrix, DVector};
use petgraph::graph::UnGraph;
use rayon::prelude::*;
use serde::Serialize;

use crate::capability::{field_curve, reactive_limit, LimitKind};
use crate::error::{Error, Result};
use crate::flex::polygon::FlexPolygon;
use crate::model::{NetworkCase, Scope, StressDirection};
use crate::nlp::{solve_nlp, NlpOptions, NlpProblem, NlpStatus};
use crate::powerflow::network::radial;
use crate::powerflow::{IbgMode, OperatingPoint, PowerFlow};

const OUTER_MAX: usize = 10;
const K_TOL: f64 = 1e-8;
const AUDIT_TOL: f64 = 1e-5;

/// How ADNs take part in the margin problem.
#[derive(Clone, Debug, Default)]
pub enum AdnMode {
    /// Exchanges held at their initial values.
    #[default]
    Frozen,
    /// One polygon per ADN, in case order; a single-point polygon freezes it.
    Flexible(Vec<FlexPolygon>),
}

#[derive(Clone, Debug)]
pub struct VsmProblemSpec {
    pub case: NetworkCase,
    pub dir: StressDirection,
    /// Branch taken out of service before solving.
    pub contingency: Option<String>,
    pub adn_mode: AdnMode,
    pub nlp: NlpOptions,
}

impl VsmProblemSpec {
    pub fn new(case: NetworkCase, dir: StressDirection) -> Self {
        Self {
            case,
            dir,
            contingency: None,
            adn_mode: AdnMode::Frozen,
            nlp: NlpOptions::from_env(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GenReport {
    pub id: String,
    pub p_mw: f64,
    pub q_mvar: f64,
    pub v: f64,
    pub v_ref: f64,
    /// Reactive capability at the solution, when known.
    pub q_max: Option<f64>,
    /// Capability limit the machine sits on, if any.
    pub limit: Option<LimitKind>,
    pub k: Option<f64>,
    pub at_p_limit: bool,
}

/// What a plain power flow reports slightly beyond the computed margin.
#[derive(Clone, Debug, Serialize)]
pub enum ProbeOutcome {
    /// Newton failed to converge, as expected beyond the nose.
    Diverged(String),
    /// Converged, but these operating limits are violated.
    LimitViolations(Vec<String>),
    /// Converged within all limits: the margin is not maximal.
    Feasible,
}

impl ProbeOutcome {
    pub fn confirms_margin(&self) -> bool {
        !matches!(self, ProbeOutcome::Feasible)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VsmSolution {
    pub lambda_star: f64,
    /// Margin `λ* Σ d_p` (MW).
    pub vsm_mw: f64,
    pub point: OperatingPoint,
    pub gen_report: Vec<GenReport>,
    /// `(ΔP_j, ΔQ_j)` of every ADN (MW, Mvar).
    pub adn_adjustments: Vec<(f64, f64)>,
    /// Indices of polygon edges binding at the solution, per ADN.
    pub binding_fr_constraints: Vec<Vec<usize>>,
    /// Sources with neither the voltage at its reference nor the reactive
    /// output at a limit.
    pub complementarity_violations: Vec<String>,
    pub probe: ProbeOutcome,
    pub outer_iterations: usize,
}

/// Copy of `case` with `branch` out of service; fails when that islands
/// the network.
pub fn apply_contingency(case: &NetworkCase, branch: &str) -> Result<NetworkCase> {
    let mut out = case.clone();
    let br = out
        .branches
        .iter_mut()
        .find(|b| b.id == branch)
        .ok_or_else(|| Error::UnknownBranch(branch.to_string()))?;
    br.in_service = false;
    let idx = out.index_map();
    let mut g = UnGraph::<(), ()>::new_undirected();
    let nodes: Vec<_> = out.buses.iter().map(|_| g.add_node(())).collect();
    for b in out.branches.iter().filter(|b| b.in_service) {
        g.add_edge(nodes[idx[b.from.as_str()]], nodes[idx[b.to.as_str()]], ());
    }
    for t in &out.transformers {
        g.add_edge(nodes[idx[t.hv_bus.as_str()]], nodes[idx[t.mv_bus.as_str()]], ());
    }
    let parts = petgraph::algo::connected_components(&g);
    if parts > 1 {
        return Err(Error::Islanding(format!("outage of '{branch}' splits the network into {parts} parts")));
    }
    Ok(out)
}

struct VsmNlp<'a> {
    pf: &'a PowerFlow,
    polys: Vec<Option<&'a FlexPolygon>>,
    k_sat: &'a [Option<f64>],
    w: Vec<f64>,
    s_tot: f64,
    v_lim: Vec<(f64, f64)>,
    n: usize,
    ns: usize,
}

impl VsmNlp<'_> {
    fn i_dl(&self) -> usize {
        2 * self.n
    }
    fn i_lam(&self) -> usize {
        2 * self.n + 1
    }
    fn i_q(&self, s: usize) -> usize {
        2 * self.n + 2 + s
    }
    fn i_adn(&self, a: usize) -> usize {
        2 * self.n + 2 + self.ns + 2 * a
    }
    fn base(&self) -> f64 {
        self.pf.base_mva
    }

    /// Source output (MW) and its gradient over `(ΔL, λ)`.
    fn p_src(&self, x: &[f64], s: usize) -> (f64, f64, f64) {
        let src = &self.pf.sources[s];
        match src.fixed_p {
            Some(p) => (p, 0.0, 0.0),
            None => {
                let b = self.base();
                let w = self.w[s];
                let shift = x[self.i_dl()] * b + x[self.i_lam()] * self.s_tot;
                (src.p0 + w * shift, w * b, w * self.s_tot)
            }
        }
    }

    fn r(&self, x: &[f64], k: usize) -> f64 {
        x[k] * x[k] + x[self.n + k] * x[self.n + k]
    }

    /// Field limit `(q, dq/dr, d2q/dr2, d2q/dr dP, dq/dP)` in Mvar.
    fn field(&self, x: &[f64], s: usize) -> Option<(f64, f64, f64, f64, f64)> {
        let src = &self.pf.sources[s];
        let caps = src.caps.as_ref()?;
        let k = self.k_sat[s]?;
        let v = self.r(x, src.bus).sqrt();
        let (p, _, _) = self.p_src(x, s);
        let c = field_curve(caps, k, p, v).ok()?;
        let q_r = c.dq_dv / (2.0 * v);
        let q_rr = (c.d2q_dv2 - c.dq_dv / v) / (4.0 * v * v);
        let q_rp = c.d2q_dvdp / (2.0 * v);
        Some((c.q, q_r, q_rr, q_rp, c.dq_dp))
    }

    fn capable(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.ns).filter(|&s| self.pf.sources[s].caps.is_some() && self.k_sat[s].is_some())
    }

    fn n_fr(&self) -> usize {
        self.polys
            .iter()
            .map(|p| p.map_or(0, |p| p.half_planes.len()))
            .sum()
    }
}

impl NlpProblem for VsmNlp<'_> {
    fn n(&self) -> usize {
        2 * self.n + 2 + self.ns + 2 * self.polys.len()
    }

    fn n_eq(&self) -> usize {
        2 * self.n + 1
    }

    fn n_ineq(&self) -> usize {
        2 * self.n + self.ns + 2 * self.capable().count() + self.n_fr()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let nv = NlpProblem::n(self);
        let mut lb = vec![f64::NEG_INFINITY; nv];
        let mut ub = vec![f64::INFINITY; nv];
        for (a, p) in self.polys.iter().enumerate() {
            if p.is_none() {
                for j in [self.i_adn(a), self.i_adn(a) + 1] {
                    lb[j] = 0.0;
                    ub[j] = 0.0;
                }
            }
        }
        (lb, ub)
    }

    fn objective(&self, x: &[f64]) -> f64 {
        -x[self.i_lam()] * self.s_tot / self.base()
    }

    fn gradient(&self, _: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(NlpProblem::n(self));
        g[self.i_lam()] = -self.s_tot / self.base();
        g
    }

    fn eq(&self, x: &[f64]) -> DVector<f64> {
        let n = self.n;
        let b = self.base();
        let (e, f) = (&x[..n], &x[n..2 * n]);
        let (pinj, qinj) = self.pf.y.injections(e, f);
        let l = self.pf.bus_loads(e, f, x[self.i_lam()]);
        let mut c = DVector::zeros(2 * n + 1);
        for k in 0..n {
            c[k] = pinj[k] + l[k].p;
            c[n + k] = qinj[k] + l[k].q;
        }
        for s in 0..self.ns {
            let bus = self.pf.sources[s].bus;
            c[bus] -= self.p_src(x, s).0 / b;
            c[n + bus] -= x[self.i_q(s)];
        }
        for g in &self.pf.ibgs {
            c[g.bus] -= g.p / b;
            if let IbgMode::FixedQ(q) = g.mode {
                c[n + g.bus] -= q / b;
            }
        }
        for (a, adn) in self.pf.adns.iter().enumerate() {
            c[adn.bus] += x[self.i_adn(a)];
            c[n + adn.bus] += x[self.i_adn(a) + 1];
        }
        c[2 * n] = f[self.pf.slack];
        c
    }

    fn eq_jac(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let b = self.base();
        let (e, f) = (&x[..n], &x[n..2 * n]);
        let l = self.pf.bus_loads(e, f, x[self.i_lam()]);
        let mut j = DMatrix::zeros(2 * n + 1, NlpProblem::n(self));
        j.view_mut((0, 0), (2 * n, 2 * n))
            .copy_from(&self.pf.y.injection_jacobian(e, f));
        for k in 0..n {
            j[(k, k)] += 2.0 * e[k] * l[k].p1;
            j[(k, n + k)] += 2.0 * f[k] * l[k].p1;
            j[(n + k, k)] += 2.0 * e[k] * l[k].q1;
            j[(n + k, n + k)] += 2.0 * f[k] * l[k].q1;
            j[(k, self.i_lam())] += self.pf.stress_p[k] / b;
            j[(n + k, self.i_lam())] += self.pf.stress_q[k] / b;
        }
        for s in 0..self.ns {
            let bus = self.pf.sources[s].bus;
            let (_, d_dl, d_lam) = self.p_src(x, s);
            j[(bus, self.i_dl())] -= d_dl / b;
            j[(bus, self.i_lam())] -= d_lam / b;
            j[(n + bus, self.i_q(s))] -= 1.0;
        }
        for (a, adn) in self.pf.adns.iter().enumerate() {
            j[(adn.bus, self.i_adn(a))] += 1.0;
            j[(n + adn.bus, self.i_adn(a) + 1)] += 1.0;
        }
        j[(2 * n, n + self.pf.slack)] = 1.0;
        j
    }

    fn ineq(&self, x: &[f64]) -> DVector<f64> {
        let n = self.n;
        let b = self.base();
        let mut g = Vec::with_capacity(NlpProblem::n_ineq(self));
        for k in 0..n {
            let (lo, hi) = self.v_lim[k];
            g.push(self.r(x, k) - lo * lo);
            g.push(hi * hi - self.r(x, k));
        }
        for s in 0..self.ns {
            let src = &self.pf.sources[s];
            g.push(src.v_ref * src.v_ref - self.r(x, src.bus));
        }
        for s in self.capable().collect::<Vec<_>>() {
            let src = &self.pf.sources[s];
            let caps = src.caps.as_ref().expect("capable");
            let (p, _, _) = self.p_src(x, s);
            let q = x[self.i_q(s)];
            let i = caps.i_n() / b;
            g.push(i * i * self.r(x, src.bus) - (p / b).powi(2) - q * q);
            g.push(self.field(x, s).map_or(f64::NAN, |fl| fl.0 / b) - q);
        }
        for (a, p) in self.polys.iter().enumerate() {
            if let Some(p) = p {
                let (dp, dq) = (x[self.i_adn(a)] * b, x[self.i_adn(a) + 1] * b);
                for &(al, be) in &p.half_planes {
                    g.push(al * dp + be * dq + 1.0);
                }
            }
        }
        DVector::from_vec(g)
    }

    fn ineq_jac(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let b = self.base();
        let mut j = DMatrix::zeros(NlpProblem::n_ineq(self), NlpProblem::n(self));
        let mut row = 0;
        for k in 0..n {
            j[(row, k)] = 2.0 * x[k];
            j[(row, n + k)] = 2.0 * x[n + k];
            j[(row + 1, k)] = -2.0 * x[k];
            j[(row + 1, n + k)] = -2.0 * x[n + k];
            row += 2;
        }
        for s in 0..self.ns {
            let bus = self.pf.sources[s].bus;
            j[(row, bus)] = -2.0 * x[bus];
            j[(row, n + bus)] = -2.0 * x[n + bus];
            row += 1;
        }
        for s in self.capable().collect::<Vec<_>>() {
            let src = &self.pf.sources[s];
            let bus = src.bus;
            let caps = src.caps.as_ref().expect("capable");
            let (p, d_dl, d_lam) = self.p_src(x, s);
            let i2 = (caps.i_n() / b).powi(2);
            let qi = self.i_q(s);
            j[(row, bus)] = 2.0 * i2 * x[bus];
            j[(row, n + bus)] = 2.0 * i2 * x[n + bus];
            j[(row, self.i_dl())] = -2.0 * p / b * d_dl / b;
            j[(row, self.i_lam())] = -2.0 * p / b * d_lam / b;
            j[(row, qi)] = -2.0 * x[qi];
            row += 1;
            let (_, q_r, _, _, q_p) = self.field(x, s).unwrap_or((f64::NAN, f64::NAN, 0.0, 0.0, f64::NAN));
            j[(row, bus)] = 2.0 * x[bus] * q_r / b;
            j[(row, n + bus)] = 2.0 * x[n + bus] * q_r / b;
            j[(row, self.i_dl())] = q_p * d_dl / b;
            j[(row, self.i_lam())] = q_p * d_lam / b;
            j[(row, qi)] = -1.0;
            row += 1;
        }
        for (a, p) in self.polys.iter().enumerate() {
            if let Some(p) = p {
                for &(al, be) in &p.half_planes {
                    j[(row, self.i_adn(a))] = al * b;
                    j[(row, self.i_adn(a) + 1)] = be * b;
                    row += 1;
                }
            }
        }
        j
    }

    fn hessian(&self, x: &[f64], sigma: f64, lambda: &[f64], m: &[f64]) -> DMatrix<f64> {
        let _ = sigma; // linear objective
        let n = self.n;
        let b = self.base();
        let nv = NlpProblem::n(self);
        let (e, f) = (&x[..n], &x[n..2 * n]);
        let wp = &lambda[..n];
        let wq = &lambda[n..2 * n];
        let mut wr = vec![0.0; n];
        let mut wr2 = vec![0.0; n];
        let mut h = DMatrix::zeros(nv, nv);
        let mut row = 0;
        for w in wr.iter_mut() {
            *w += m[row] - m[row + 1];
            row += 2;
        }
        for s in 0..self.ns {
            wr[self.pf.sources[s].bus] -= m[row];
            row += 1;
        }
        let (idl, ilam) = (self.i_dl(), self.i_lam());
        for s in self.capable().collect::<Vec<_>>() {
            let src = &self.pf.sources[s];
            let bus = src.bus;
            let caps = src.caps.as_ref().expect("capable");
            let (_, d_dl, d_lam) = self.p_src(x, s);
            let (a_dl, a_lam) = (d_dl / b, d_lam / b);
            // armature
            let ma = m[row];
            wr[bus] += ma * (caps.i_n() / b).powi(2);
            h[(idl, idl)] -= 2.0 * ma * a_dl * a_dl;
            h[(idl, ilam)] -= 2.0 * ma * a_dl * a_lam;
            h[(ilam, idl)] -= 2.0 * ma * a_lam * a_dl;
            h[(ilam, ilam)] -= 2.0 * ma * a_lam * a_lam;
            let qi = self.i_q(s);
            h[(qi, qi)] -= 2.0 * ma;
            row += 1;
            // field, linear in P
            let mf = m[row];
            if let Some((_, q_r, q_rr, q_rp, _)) = self.field(x, s) {
                wr[bus] += mf * q_r / b;
                wr2[bus] += mf * q_rr / b;
                for (col, dp) in [(idl, d_dl), (ilam, d_lam)] {
                    let c = mf * q_rp / b * dp;
                    for (v, idx) in [(e[bus], bus), (f[bus], n + bus)] {
                        h[(idx, col)] += 2.0 * v * c;
                        h[(col, idx)] += 2.0 * v * c;
                    }
                }
            }
            row += 1;
        }
        let mut ef = self.pf.y.weighted_hessian(wp, wq);
        let loads = self.pf.bus_loads(e, f, x[ilam]);
        for k in 0..n {
            let d1 = wp[k] * loads[k].p1 + wq[k] * loads[k].q1 + wr[k];
            let d2 = wp[k] * loads[k].p2 + wq[k] * loads[k].q2 + wr2[k];
            if d1 == 0.0 && d2 == 0.0 {
                continue;
            }
            let t = radial(e[k], f[k], d1, d2);
            ef[(k, k)] += t.dee;
            ef[(k, n + k)] += t.def;
            ef[(n + k, k)] += t.def;
            ef[(n + k, n + k)] += t.dff;
        }
        let mut blk = h.view_mut((0, 0), (2 * n, 2 * n));
        blk += ef;
        h
    }
}


fn polygons_for(case: &NetworkCase, mode: &AdnMode) -> Result<Vec<Option<FlexPolygon>>> {
    let na = case.adns.len();
    match mode {
        AdnMode::Frozen => Ok(vec![None; na]),
        AdnMode::Flexible(polys) => {
            if polys.len() != na {
                return Err(Error::Dimension {
                    expected: na,
                    got: polys.len(),
                });
            }
            for p in polys {
                p.check()?;
            }
            Ok(polys
                .iter()
                .map(|p| (!p.is_single_point()).then(|| p.clone()))
                .collect())
        }
    }
}

/// Maximizes the stress level along `spec.dir`.
pub fn solve_vsm(spec: &VsmProblemSpec) -> Result<VsmSolution> {
    spec.dir.validate()?;
    let case = match &spec.contingency {
        Some(b) => apply_contingency(&spec.case, b)?,
        None => spec.case.clone(),
    };
    if case.scope != Scope::Transmission {
        return Err(Error::InvalidCase("margin problems need a transmission case".into()));
    }
    let mut pf = PowerFlow::new(&case)?;
    pf.set_stress(&case, &spec.dir)?;
    if pf.ibgs.iter().any(|g| !matches!(g.mode, IbgMode::FixedQ(_))) {
        return Err(Error::InvalidCase(
            "voltage-controlled converters are not supported at transmission level".into(),
        ));
    }
    let polys = polygons_for(&case, &spec.adn_mode)?;
    let base = pf.base_mva;
    let n = pf.n();
    let ns = pf.sources.len();

    let mut init = pf.clone();
    let start = init.solve_with_limits(&pf.flat_start())?;
    let p0 = init.source_p(&start)?;
    let q0 = init.source_q(&start)?;
    let mut k_sat: Vec<Option<f64>> = pf
        .sources
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.caps
                .as_ref()
                .and_then(|c| reactive_limit(c, p0[i], start.vm(s.bus)).ok().map(|r| r.2))
        })
        .collect();
    let mut x: Vec<f64> = Vec::new();
    x.extend_from_slice(&start.e);
    x.extend_from_slice(&start.f);
    x.push(start.delta_l / base);
    x.push(0.0);
    x.extend(q0.iter().map(|q| q / base));
    x.extend(std::iter::repeat_n(0.0, 2 * case.adns.len()));
    let v_lim: Vec<(f64, f64)> = case.buses.iter().map(|b| (b.v_min, b.v_max)).collect();

    let mut outer = 0;
    loop {
        outer += 1;
        let nlp = VsmNlp {
            pf: &pf,
            polys: polys.iter().map(|p| p.as_ref()).collect(),
            k_sat: &k_sat,
            w: pf.weights()?,
            s_tot: pf.total_stress(),
            v_lim: v_lim.clone(),
            n,
            ns,
        };
        let sol = solve_nlp(&nlp, &x, &spec.nlp);
        match sol.status {
            NlpStatus::Optimal => {}
            NlpStatus::Infeasible => return Err(Error::Infeasible(sol.diagnostic())),
            _ => return Err(Error::Optimization(sol.diagnostic())),
        }
        x = sol.x;
        let p_now: Vec<f64> = (0..ns).map(|s| nlp.p_src(&x, s).0).collect();
        let v_now: Vec<f64> = (0..ns).map(|s| nlp.r(&x, pf.sources[s].bus).sqrt()).collect();
        drop(nlp);
        let mut changed = false;
        for (s, &p) in p_now.iter().enumerate() {
            let src = &pf.sources[s];
            if src.fixed_p.is_none() && (p > src.p_max + 1e-6 || p < src.p_min - 1e-6) {
                pf.sources[s].fixed_p = Some(p.clamp(src.p_min, src.p_max));
                changed = true;
            }
        }
        for s in 0..ns {
            let Some(caps) = pf.sources[s].caps.as_ref() else { continue };
            let k = reactive_limit(caps, p_now[s], v_now[s]).ok().map(|r| r.2);
            if let (Some(new), Some(old)) = (k, k_sat[s]) {
                if (new - old).abs() > K_TOL {
                    k_sat[s] = Some(new);
                    changed = true;
                }
            }
        }
        if changed {
            pf.weights()?;
        }
        if !changed || outer >= OUTER_MAX {
            break;
        }
    }

    let nlp = VsmNlp {
        pf: &pf,
        polys: polys.iter().map(|p| p.as_ref()).collect(),
        k_sat: &k_sat,
        w: pf.weights()?,
        s_tot: pf.total_stress(),
        v_lim,
        n,
        ns,
    };
    let lambda_star = x[nlp.i_lam()];
    let point = OperatingPoint {
        e: x[..n].to_vec(),
        f: x[n..2 * n].to_vec(),
        delta_l: x[nlp.i_dl()] * base,
        lambda: lambda_star,
    };
    let mut gen_report = Vec::with_capacity(ns);
    let mut violations = Vec::new();
    for (s, src) in pf.sources.iter().enumerate() {
        let (p, _, _) = nlp.p_src(&x, s);
        let q = x[nlp.i_q(s)] * base;
        let v = point.vm(src.bus);
        let lim = src.caps.as_ref().and_then(|c| reactive_limit(c, p, v).ok());
        let on_limit = lim.filter(|&(q_max, _, _)| q >= q_max - AUDIT_TOL * q_max.abs().max(1.0));
        let at_ref = (v - src.v_ref).abs() <= AUDIT_TOL;
        if !at_ref && on_limit.is_none() {
            violations.push(format!(
                "{}: V = {v:.6} below reference {:.4} with Q = {q:.3} Mvar inside its capability",
                src.id, src.v_ref
            ));
        }
        gen_report.push(GenReport {
            id: src.id.clone(),
            p_mw: p,
            q_mvar: q,
            v,
            v_ref: src.v_ref,
            q_max: lim.map(|l| l.0),
            limit: on_limit.map(|l| l.1),
            k: k_sat[s],
            at_p_limit: src.fixed_p.is_some(),
        });
    }
    // frozen ADNs report exact zeros rather than solver round-off
    let adn_adjustments: Vec<(f64, f64)> = (0..case.adns.len())
        .map(|a| match polys[a] {
            Some(_) => (x[nlp.i_adn(a)] * base, x[nlp.i_adn(a) + 1] * base),
            None => (0.0, 0.0),
        })
        .collect();
    let binding_fr_constraints = polys
        .iter()
        .zip(&adn_adjustments)
        .map(|(p, &(dp, dq))| match p {
            Some(p) => p
                .half_planes
                .iter()
                .enumerate()
                .filter(|(_, &(al, be))| al * dp + be * dq + 1.0 <= 1e-6)
                .map(|(i, _)| i)
                .collect(),
            None => Vec::new(),
        })
        .collect();
    let probe = probe_beyond(&pf, &case, &point, &adn_adjustments);
    Ok(VsmSolution {
        lambda_star,
        vsm_mw: lambda_star * pf.total_stress(),
        point,
        gen_report,
        adn_adjustments,
        binding_fr_constraints,
        complementarity_violations: violations,
        probe,
        outer_iterations: outer,
    })
}

/// Margin with the ADNs free to move within their flexibility regions.
pub fn solve_vsm_flex(case: &NetworkCase, dir: &StressDirection, polygons: Vec<FlexPolygon>) -> Result<VsmSolution> {
    let mut spec = VsmProblemSpec::new(case.clone(), dir.clone());
    spec.adn_mode = AdnMode::Flexible(polygons);
    solve_vsm(&spec)
}

/// Runs a limit-switching power flow a little beyond `λ*`.
fn probe_beyond(pf: &PowerFlow, case: &NetworkCase, at: &OperatingPoint, adj: &[(f64, f64)]) -> ProbeOutcome {
    let mut p = pf.clone();
    if let Err(e) = p.set_adjustments(adj) {
        return ProbeOutcome::Diverged(e.to_string());
    }
    let mut start = at.clone();
    start.lambda += 1e-3 * at.lambda.abs().max(1e-6);
    match p.solve_with_limits(&start) {
        Err(e) => ProbeOutcome::Diverged(e.to_string()),
        Ok(pt) => {
            let v: Vec<String> = case
                .buses
                .iter()
                .enumerate()
                .filter(|(k, b)| pt.vm(*k) < b.v_min - 1e-9 || pt.vm(*k) > b.v_max + 1e-9)
                .map(|(k, b)| format!("V@{} = {:.5}", b.id, pt.vm(k)))
                .collect();
            if v.is_empty() {
                ProbeOutcome::Feasible
            } else {
                ProbeOutcome::LimitViolations(v)
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PvPoint {
    pub lambda: f64,
    pub p_mw: f64,
    /// Bus voltage magnitudes, in case order.
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PvCurve {
    pub points: Vec<PvPoint>,
    pub lambda_max: f64,
    pub vsm_mw: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct PvOptions {
    /// Initial stress increment.
    pub step: f64,
    /// Increment below which the nose is taken as found.
    pub min_step: f64,
    pub max_points: usize,
}

impl Default for PvOptions {
    fn default() -> Self {
        Self {
            step: 0.05,
            min_step: 1e-7,
            max_points: 5000,
        }
    }
}

/// PV curve by natural-parameter continuation with step halving; the last
/// converged stress level approximates the nose from below.
pub fn pv_curve(
    case: &NetworkCase,
    dir: &StressDirection,
    adjustments: &[(f64, f64)],
    opts: &PvOptions,
) -> Result<PvCurve> {
    dir.validate()?;
    let mut pf = PowerFlow::new(case)?;
    pf.set_stress(case, dir)?;
    if !adjustments.is_empty() {
        pf.set_adjustments(adjustments)?;
    }
    let mut pt = pf.solve_with_limits(&pf.flat_start())?;
    let s_tot = pf.total_stress();
    let record = |pt: &OperatingPoint| PvPoint {
        lambda: pt.lambda,
        p_mw: pt.lambda * s_tot,
        v: (0..pt.n()).map(|k| pt.vm(k)).collect(),
    };
    let mut points = vec![record(&pt)];
    let mut h = opts.step;
    while h >= opts.min_step && points.len() < opts.max_points {
        let mut trial = pf.clone();
        let mut start = pt.clone();
        start.lambda += h;
        match trial.solve_with_limits(&start) {
            Ok(next) if next.e.iter().all(|v| v.is_finite()) => {
                pf = trial;
                pt = next;
                points.push(record(&pt));
            }
            _ => h *= 0.5,
        }
    }
    Ok(PvCurve {
        lambda_max: pt.lambda,
        vsm_mw: pt.lambda * s_tot,
        points,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ContingencyResult {
    pub branch: String,
    pub vsm_mw: Option<f64>,
    pub error: Option<String>,
}

/// Margins after each single-branch outage, most severe first; outages
/// that fail to solve are listed last.
pub fn screen_contingencies(spec: &VsmProblemSpec, branches: &[String]) -> Vec<ContingencyResult> {
    let mut out: Vec<ContingencyResult> = branches
        .par_iter()
        .map(|b| {
            let mut s = spec.clone();
            s.contingency = Some(b.clone());
            match solve_vsm(&s) {
                Ok(sol) => ContingencyResult {
                    branch: b.clone(),
                    vsm_mw: Some(sol.vsm_mw),
                    error: None,
                },
                Err(e) => ContingencyResult {
                    branch: b.clone(),
                    vsm_mw: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    out.sort_by(|a, b| match (a.vsm_mw, b.vsm_mw) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.branch.cmp(&b.branch),
    });
    out
}
