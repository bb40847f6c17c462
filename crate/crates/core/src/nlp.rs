//! Dense primal-dual interior-point solver for smooth nonlinear programs
//!
//! ```text
//! min f(x)  s.t.  c(x) = 0,  g(x) >= 0,  lb <= x <= ub
//! ```
//!
//! Internally the inequalities (including finite bounds) are written as
//! `h(x) <= 0` with slacks `z > 0`, `h + z = 0`, and the barrier parameter is
//! driven to zero by a fixed centering factor. Each iteration solves the
//! reduced KKT system
//!
//! ```text
//! [ Lxx + dh Z^-1 M dh'   dc ] [dx]   [ -(Lx + dh Z^-1 (M h + γ e)) ]
//! [ dc'                    0 ] [dλ] = [ -c                           ]
//! ```
//!
//! with a dense LU factorization. Variables with `lb == ub` become equality
//! constraints.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Step halvings allowed when a trial point leaves the function domain.
const MAX_DOMAIN_CUTS: usize = 30;
/// Step halvings allowed by the merit line search; past this the step is
/// taken regardless.
const MAX_MERIT_CUTS: usize = 12;
const ARMIJO: f64 = 1e-4;
/// Consecutive fully backtracked steps after which a feasible iterate is
/// returned as acceptable.
const STALL_ITERS: usize = 5;

/// A smooth nonlinear program with analytic first and second derivatives.
pub trait NlpProblem {
    fn n(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    /// Per-variable box, infinite entries meaning unbounded.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> DVector<f64>;
    /// Equality constraints `c(x) = 0`.
    fn eq(&self, x: &[f64]) -> DVector<f64>;
    /// `n_eq x n` Jacobian of `c`.
    fn eq_jac(&self, x: &[f64]) -> DMatrix<f64>;
    /// Inequality constraints `g(x) >= 0`.
    fn ineq(&self, x: &[f64]) -> DVector<f64>;
    /// `n_ineq x n` Jacobian of `g`.
    fn ineq_jac(&self, x: &[f64]) -> DMatrix<f64>;
    /// `sigma ∇²f + Σ λ_i ∇²c_i + Σ m_j ∇²g_j`.
    fn hessian(&self, x: &[f64], sigma: f64, lambda: &[f64], m: &[f64]) -> DMatrix<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NlpStatus {
    Optimal,
    /// Primal feasible but optimality not certified, because the iteration
    /// limit was hit or no step could decrease the merit function.
    Acceptable,
    Infeasible,
    MaxIter,
    NumericalFailure,
}

#[derive(Clone, Debug, Serialize)]
pub struct Multipliers {
    /// Equality multipliers, sign convention of `f + λ'c`.
    pub eq: Vec<f64>,
    /// Nonnegative multipliers of `g(x) >= 0`.
    pub ineq: Vec<f64>,
    /// Nonnegative multipliers of the lower and upper bounds.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub multipliers: Multipliers,
    pub status: NlpStatus,
    /// Indices of binding `g` constraints.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    /// `max(|c|, max(-g, 0), bound violation)`.
    pub feasibility: f64,
    /// `|∇L|_∞ / (1 + max(|λ|_∞, |μ|_∞))`.
    pub stationarity: f64,
    /// `z'μ / (1 + |x|_∞)`.
    pub complementarity: f64,
    /// Index into `c ++ g` of the worst violated constraint, when any.
    pub worst_constraint: Option<usize>,
    pub last_step_norm: f64,
}

impl NlpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == NlpStatus::Optimal
    }

    /// Optimal, or feasible where only the primal answer matters.
    pub fn is_acceptable(&self) -> bool {
        matches!(self.status, NlpStatus::Optimal | NlpStatus::Acceptable)
    }

    pub fn diagnostic(&self) -> String {
        format!(
            "status {:?} after {} iterations: feasibility {:.2e}, stationarity {:.2e}, \
             complementarity {:.2e}, worst constraint {:?}, last step {:.2e}",
            self.status,
            self.iterations,
            self.feasibility,
            self.stationarity,
            self.complementarity,
            self.worst_constraint,
            self.last_step_norm
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NlpOptions {
    pub feas_tol: f64,
    pub grad_tol: f64,
    pub comp_tol: f64,
    pub max_iter: usize,
    /// Centering factor applied to the average complementarity.
    pub sigma: f64,
    /// Fraction of the distance to the boundary a step may travel.
    pub xi: f64,
    pub z0: f64,
    /// Backtrack on an exact-penalty merit function.
    pub line_search: bool,
}

impl Default for NlpOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            grad_tol: 1e-6,
            comp_tol: 1e-10,
            max_iter: 200,
            sigma: 0.1,
            xi: 0.99995,
            z0: 1.0,
            line_search: true,
        }
    }
}

impl NlpOptions {
    /// Defaults overridden by `ADNFLEX_FEAS_TOL`, `ADNFLEX_GRAD_TOL`,
    /// `ADNFLEX_COMP_TOL` and `ADNFLEX_MAX_ITER` when set.
    pub fn from_env() -> Self {
        let mut o = Self::default();
        let read = |name: &str| std::env::var(name).ok().and_then(|v| v.trim().parse::<f64>().ok());
        if let Some(v) = read("ADNFLEX_FEAS_TOL") {
            o.feas_tol = v;
        }
        if let Some(v) = read("ADNFLEX_GRAD_TOL") {
            o.grad_tol = v;
        }
        if let Some(v) = read("ADNFLEX_COMP_TOL") {
            o.comp_tol = v;
        }
        if let Some(v) = read("ADNFLEX_MAX_ITER") {
            o.max_iter = v as usize;
        }
        o
    }
}

/// Row layout of the internal `h(x) <= 0` vector.
struct Layout {
    n_g: usize,
    lower: Vec<(usize, f64)>,
    upper: Vec<(usize, f64)>,
    fixed: Vec<(usize, f64)>,
}

impl Layout {
    fn new(prob: &dyn NlpProblem) -> Self {
        let (lb, ub) = prob.bounds();
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut fixed = Vec::new();
        for i in 0..prob.n() {
            if lb[i] == ub[i] {
                fixed.push((i, lb[i]));
                continue;
            }
            if lb[i].is_finite() {
                lower.push((i, lb[i]));
            }
            if ub[i].is_finite() {
                upper.push((i, ub[i]));
            }
        }
        Self {
            n_g: prob.n_ineq(),
            lower,
            upper,
            fixed,
        }
    }

    fn n_iq(&self) -> usize {
        self.n_g + self.lower.len() + self.upper.len()
    }
}

struct Eval {
    f: f64,
    df: DVector<f64>,
    c: DVector<f64>,
    /// `n x n_eq`, one column per constraint.
    dc: DMatrix<f64>,
    h: DVector<f64>,
    /// `n x n_iq`.
    dh: DMatrix<f64>,
}

impl Eval {
    fn is_finite(&self) -> bool {
        self.f.is_finite()
            && self.df.iter().chain(&self.c).chain(&self.h).all(|v| v.is_finite())
            && self.dc.iter().chain(self.dh.iter()).all(|v| v.is_finite())
    }
}

fn evaluate(prob: &dyn NlpProblem, lay: &Layout, x: &[f64]) -> Eval {
    let n = x.len();
    let f = prob.objective(x);
    let df = prob.gradient(x);
    let ce = prob.eq(x);
    let je = prob.eq_jac(x);
    let n_eq = ce.len() + lay.fixed.len();
    let mut c = DVector::zeros(n_eq);
    let mut dc = DMatrix::zeros(n, n_eq);
    c.rows_mut(0, ce.len()).copy_from(&ce);
    dc.columns_mut(0, ce.len()).copy_from(&je.transpose());
    for (j, &(i, v)) in lay.fixed.iter().enumerate() {
        c[ce.len() + j] = x[i] - v;
        dc[(i, ce.len() + j)] = 1.0;
    }
    let g = prob.ineq(x);
    let jg = prob.ineq_jac(x);
    let n_iq = lay.n_iq();
    let mut h = DVector::zeros(n_iq);
    let mut dh = DMatrix::zeros(n, n_iq);
    for j in 0..lay.n_g {
        h[j] = -g[j];
        for i in 0..n {
            dh[(i, j)] = -jg[(j, i)];
        }
    }
    let mut row = lay.n_g;
    for &(i, v) in &lay.lower {
        h[row] = v - x[i];
        dh[(i, row)] = -1.0;
        row += 1;
    }
    for &(i, v) in &lay.upper {
        h[row] = x[i] - v;
        dh[(i, row)] = 1.0;
        row += 1;
    }
    Eval { f, df, c, dc, h, dh }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.amax()
    }
}

/// Solves `prob` from `x0`.
///
/// The iterate sequence is a deterministic function of the inputs. A
/// non-optimal status is returned as a solution carrying diagnostics rather
/// than as an error, so callers can decide how to proceed.
pub fn solve_nlp(prob: &dyn NlpProblem, x0: &[f64], opts: &NlpOptions) -> NlpSolution {
    assert_eq!(x0.len(), prob.n(), "starting point dimension");
    let n = prob.n();
    let lay = Layout::new(prob);
    let n_iq = lay.n_iq();
    let n_ce = prob.n_eq();

    let mut x = DVector::from_column_slice(x0);
    let mut ev = evaluate(prob, &lay, x.as_slice());
    let n_eq = ev.c.len();
    let mut lam = DVector::zeros(n_eq);
    let mut z = DVector::from_element(n_iq, opts.z0);
    let mut mu = DVector::from_element(n_iq, opts.z0);
    let mut gamma = 1.0;
    for j in 0..n_iq {
        if ev.h[j] < -opts.z0 {
            z[j] = -ev.h[j];
        }
        if gamma / z[j] > opts.z0 {
            mu[j] = gamma / z[j];
        }
    }

    let mut status = NlpStatus::MaxIter;
    let mut iterations = 0;
    let mut last_step = 0.0;
    // merit penalty, nondecreasing
    let mut nu: f64 = 0.0;
    let mut stalled = 0;
    let metrics = |ev: &Eval, x: &DVector<f64>, lam: &DVector<f64>, z: &DVector<f64>, mu: &DVector<f64>| {
        let lx = &ev.df + &ev.dc * lam + &ev.dh * mu;
        let maxh = ev.h.iter().copied().fold(0.0, |a: f64, v| if a.is_nan() || v.is_nan() { f64::NAN } else { a.max(v) });
        let feas = inf_norm(&ev.c).max(maxh);
        let grad = inf_norm(&lx) / (1.0 + inf_norm(lam).max(inf_norm(mu)));
        let comp = if n_iq > 0 { z.dot(mu) / (1.0 + inf_norm(x)) } else { 0.0 };
        (lx, feas, grad, comp)
    };

    let (mut lx, mut feas, mut grad, mut comp) = metrics(&ev, &x, &lam, &z, &mu);
    for it in 0..=opts.max_iter {
        iterations = it;
        if feas <= opts.feas_tol && grad <= opts.grad_tol && comp <= opts.comp_tol {
            status = NlpStatus::Optimal;
            break;
        }
        if it == opts.max_iter {
            break;
        }
        if !(feas.is_finite() && grad.is_finite()) {
            status = NlpStatus::NumericalFailure;
            break;
        }

        // Hessian of the Lagrangian; h = -g on the first rows
        let m_g: Vec<f64> = (0..lay.n_g).map(|j| -mu[j]).collect();
        let lam_ce: Vec<f64> = lam.rows(0, n_ce).iter().copied().collect();
        let lxx = prob.hessian(x.as_slice(), 1.0, &lam_ce, &m_g);

        let zinv = z.map(|v| 1.0 / v);
        let mut dh_zinv = ev.dh.clone();
        for j in 0..n_iq {
            dh_zinv.column_mut(j).scale_mut(zinv[j]);
        }
        let mut dh_zinv_mu = dh_zinv.clone();
        for j in 0..n_iq {
            dh_zinv_mu.column_mut(j).scale_mut(mu[j]);
        }
        let m = &lxx + &dh_zinv_mu * ev.dh.transpose();
        let dim = n + n_eq;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&m);
        kkt.view_mut((0, n), (n, n_eq)).copy_from(&ev.dc);
        kkt.view_mut((n, 0), (n_eq, n)).copy_from(&ev.dc.transpose());
        // Newton direction for constraint residuals `hv`, `cv`; the plain
        // step uses h(x), c(x), the second-order correction the residuals
        // left at the trial point
        let newton = |hv: &DVector<f64>, cv: &DVector<f64>| {
            let rhs_h = hv.component_mul(&mu) + DVector::from_element(n_iq, gamma);
            let nvec = &lx + &dh_zinv * rhs_h;
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, n).copy_from(&(-&nvec));
            rhs.rows_mut(n, n_eq).copy_from(&(-cv));
            let sol = solve_kkt(&kkt, &rhs, n)?;
            let dx = sol.rows(0, n).into_owned();
            let dlam = sol.rows(n, n_eq).into_owned();
            let dz = -hv - &z - ev.dh.transpose() * &dx;
            let dmu = -&mu + zinv.component_mul(&(DVector::from_element(n_iq, gamma) - mu.component_mul(&dz)));
            Some((dx, dlam, dz, dmu))
        };
        let Some((mut dx, mut dlam, mut dz, mut dmu)) = newton(&ev.h, &ev.c) else {
            status = NlpStatus::NumericalFailure;
            break;
        };

        let step_len = |v: &DVector<f64>, dv: &DVector<f64>| {
            let mut a: f64 = 1.0;
            for j in 0..v.len() {
                if dv[j] < 0.0 {
                    a = a.min(opts.xi * v[j] / -dv[j]);
                }
            }
            a
        };
        let mut ap = step_len(&z, &dz);
        let mut ad = step_len(&mu, &dmu);
        if opts.line_search {
            let dual = inf_norm(&(&lam + &dlam)).max(inf_norm(&(&mu + &dmu)));
            nu = nu.max(1.1 * dual);
        }
        // merit function f - γ Σ ln z + ν (|c|_1 + |h + z|_1), with ν above
        // the multipliers so that the penalty is exact
        let merit = |ev: &Eval, z: &DVector<f64>| {
            let barrier: f64 = z.iter().map(|v| v.ln()).sum();
            ev.f - gamma * barrier + nu * (ev.c.lp_norm(1) + (&ev.h + z).lp_norm(1))
        };
        let phi0 = merit(&ev, &z);
        let slope = ev.df.dot(&dx) - gamma * dz.component_div(&z).sum() - nu * (ev.c.lp_norm(1) + (&ev.h + &z).lp_norm(1));
        // shorten steps that leave the domain of the problem functions or
        // fail to decrease the merit function
        let mut trial;
        let mut trial_ev;
        let mut cuts = 0;
        let mut corrected = false;
        loop {
            trial = &x + ap * &dx;
            trial_ev = evaluate(prob, &lay, trial.as_slice());
            let finite = trial_ev.is_finite();
            // changes at round-off level count as decrease
            let noise = 1e3 * f64::EPSILON * phi0.abs().max(1.0);
            let decrease =
                |t_ev: &Eval, a: f64, dz: &DVector<f64>| merit(t_ev, &(&z + a * dz)) <= phi0 + ARMIJO * a * slope + noise;
            let accept = finite
                && (!opts.line_search || !(slope < 0.0) || cuts >= MAX_MERIT_CUTS || decrease(&trial_ev, ap, &dz));
            if accept || cuts >= MAX_DOMAIN_CUTS {
                break;
            }
            if finite && opts.line_search && !corrected && cuts == 0 {
                // second-order correction: keep the step but remove the
                // constraint curvature it ran into
                corrected = true;
                let hv = &trial_ev.h - ap * ev.dh.transpose() * &dx;
                let cv = &trial_ev.c - ap * ev.dc.transpose() * &dx;
                if let Some((sx, sl, sz, sm)) = newton(&hv, &cv) {
                    let (a_p, a_d) = (step_len(&z, &sz), step_len(&mu, &sm));
                    let t = &x + a_p * &sx;
                    let t_ev = evaluate(prob, &lay, t.as_slice());
                    if t_ev.is_finite() && decrease(&t_ev, a_p, &sz) {
                        (dx, dlam, dz, dmu, ap, ad) = (sx, sl, sz, sm, a_p, a_d);
                        trial = t;
                        trial_ev = t_ev;
                        break;
                    }
                }
            }
            ap *= 0.5;
            ad *= 0.5;
            cuts += 1;
        }
        if !trial_ev.is_finite() {
            status = NlpStatus::NumericalFailure;
            break;
        }
        stalled = if cuts >= MAX_MERIT_CUTS { stalled + 1 } else { 0 };
        if stalled >= STALL_ITERS && feas <= opts.feas_tol {
            // feasible, but the merit function admits no further progress;
            // typical of degenerate problems whose multipliers are not unique
            status = NlpStatus::Acceptable;
            break;
        }
        x = trial;
        z += ap * &dz;
        lam += ad * &dlam;
        mu += ad * &dmu;
        last_step = ap * dx.amax();
        ev = trial_ev;
        (lx, feas, grad, comp) = metrics(&ev, &x, &lam, &z, &mu);
        if n_iq > 0 {
            // the barrier may not fall far below the stationarity error, or
            // slack and multiplier of a nearly active constraint both vanish
            // and the multiplier can no longer grow
            gamma = (opts.sigma * z.dot(&mu) / n_iq as f64).max(opts.sigma * grad.min(1.0) * 1e-2);
        }
        let _ = &lx;
    }

    if status == NlpStatus::MaxIter && feas > opts.feas_tol.max(1e-6) {
        status = NlpStatus::Infeasible;
    } else if status == NlpStatus::MaxIter && feas <= opts.feas_tol {
        status = NlpStatus::Acceptable;
    }

    let mut worst = None;
    let mut worst_val = 0.0;
    for j in 0..n_ce {
        if ev.c[j].abs() > worst_val {
            worst_val = ev.c[j].abs();
            worst = Some(j);
        }
    }
    for j in 0..lay.n_g {
        if ev.h[j] > worst_val {
            worst_val = ev.h[j];
            worst = Some(n_ce + j);
        }
    }
    if worst_val <= opts.feas_tol {
        worst = None;
    }

    let ineq: Vec<f64> = (0..lay.n_g).map(|j| mu[j]).collect();
    let active_set = (0..lay.n_g).filter(|&j| mu[j] > z[j]).collect();
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for (k, &(i, _)) in lay.lower.iter().enumerate() {
        lower[i] = mu[lay.n_g + k];
    }
    for (k, &(i, _)) in lay.upper.iter().enumerate() {
        upper[i] = mu[lay.n_g + lay.lower.len() + k];
    }
    // multipliers of fixed variables act as bound multipliers
    for (k, &(i, _)) in lay.fixed.iter().enumerate() {
        let l = lam[n_ce + k];
        if l > 0.0 {
            upper[i] = l;
        } else {
            lower[i] = -l;
        }
    }

    NlpSolution {
        x: x.as_slice().to_vec(),
        objective: ev.f,
        multipliers: Multipliers {
            eq: lam.rows(0, n_ce).iter().copied().collect(),
            ineq,
            lower,
            upper,
        },
        status,
        active_set,
        iterations,
        feasibility: feas,
        stationarity: grad,
        complementarity: comp,
        worst_constraint: worst,
        last_step_norm: last_step,
    }
}

/// LU solve, retried with a small primal-dual regularization when the
/// matrix is singular.
fn solve_kkt(kkt: &DMatrix<f64>, rhs: &DVector<f64>, n: usize) -> Option<DVector<f64>> {
    let ok = |s: &DVector<f64>| s.iter().all(|v| v.is_finite());
    if let Some(s) = kkt.clone().lu().solve(rhs) {
        if ok(&s) {
            return Some(s);
        }
    }
    let scale = kkt.amax().max(1.0);
    for delta in [1e-10, 1e-8, 1e-6] {
        let mut k = kkt.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += if i < n { delta * scale } else { -delta * scale };
        }
        if let Some(s) = k.lu().solve(rhs) {
            if ok(&s) {
                return Some(s);
            }
        }
    }
    None
}
