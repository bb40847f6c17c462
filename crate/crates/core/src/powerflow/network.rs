//! Bus admittance matrix and the rectangular power injection equations.
//!
//! With `V = e + j f` and `I = Y V`, the injections are exactly quadratic in
//! `(e, f)`, so their Hessians are constant and a weighted sum of them is
//! available in closed form.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::NetworkCase;

/// Dense bus admittance matrix split into conductance and susceptance.
#[derive(Clone, Debug)]
pub struct Admittance {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Admittance {
    /// Builds `Y` from the in-service branches and transformers of a case.
    ///
    /// Transformers enter with unity ratio; the tap position is carried by
    /// the magnitude of the slack (PCC) source instead.
    pub fn build(case: &NetworkCase) -> Result<Self> {
        let n = case.buses.len();
        let idx = case.index_map();
        let mut g = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, n);
        let mut add_series = |i: usize, j: usize, r: f64, x: f64, bsh: f64| {
            let den = r * r + x * x;
            let (gs, bs) = (r / den, -x / den);
            g[(i, i)] += gs;
            g[(j, j)] += gs;
            g[(i, j)] -= gs;
            g[(j, i)] -= gs;
            b[(i, i)] += bs + bsh / 2.0;
            b[(j, j)] += bs + bsh / 2.0;
            b[(i, j)] -= bs;
            b[(j, i)] -= bs;
        };
        for br in case.branches.iter().filter(|b| b.in_service) {
            if br.x == 0.0 && br.r == 0.0 {
                return Err(Error::InvalidCase(format!("branch '{}' has zero impedance", br.id)));
            }
            add_series(idx[br.from.as_str()], idx[br.to.as_str()], br.r, br.x, br.b);
        }
        for t in &case.transformers {
            add_series(idx[t.hv_bus.as_str()], idx[t.mv_bus.as_str()], 0.0, t.x, 0.0);
        }
        Ok(Self { g, b })
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    /// Real and imaginary parts of the bus current injections.
    pub fn currents(&self, e: &[f64], f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let mut a = vec![0.0; n];
        let mut c = vec![0.0; n];
        for k in 0..n {
            let mut ak = 0.0;
            let mut ck = 0.0;
            for m in 0..n {
                let (gkm, bkm) = (self.g[(k, m)], self.b[(k, m)]);
                ak += gkm * e[m] - bkm * f[m];
                ck += gkm * f[m] + bkm * e[m];
            }
            a[k] = ak;
            c[k] = ck;
        }
        (a, c)
    }

    /// Active and reactive power injected into the network at every bus.
    pub fn injections(&self, e: &[f64], f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (a, c) = self.currents(e, f);
        let p = (0..self.n()).map(|k| e[k] * a[k] + f[k] * c[k]).collect();
        let q = (0..self.n()).map(|k| f[k] * a[k] - e[k] * c[k]).collect();
        (p, q)
    }

    /// `d(P, Q) / d(e, f)` as a `2n x 2n` matrix, rows `P` then `Q`,
    /// columns `e` then `f`.
    pub fn injection_jacobian(&self, e: &[f64], f: &[f64]) -> DMatrix<f64> {
        let n = self.n();
        let (a, c) = self.currents(e, f);
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        for k in 0..n {
            for m in 0..n {
                let (gkm, bkm) = (self.g[(k, m)], self.b[(k, m)]);
                if gkm == 0.0 && bkm == 0.0 {
                    continue;
                }
                j[(k, m)] = e[k] * gkm + f[k] * bkm;
                j[(k, n + m)] = -e[k] * bkm + f[k] * gkm;
                j[(n + k, m)] = f[k] * gkm - e[k] * bkm;
                j[(n + k, n + m)] = -f[k] * bkm - e[k] * gkm;
            }
            j[(k, k)] += a[k];
            j[(k, n + k)] += c[k];
            j[(n + k, k)] -= c[k];
            j[(n + k, n + k)] += a[k];
        }
        j
    }

    /// `sum_k mu_k Hess(P_k) + nu_k Hess(Q_k)` over `(e, f)`.
    pub fn weighted_hessian(&self, mu: &[f64], nu: &[f64]) -> DMatrix<f64> {
        let n = self.n();
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        for a in 0..n {
            for b in 0..n {
                let (gab, bab) = (self.g[(a, b)], self.b[(a, b)]);
                if gab == 0.0 && bab == 0.0 {
                    continue;
                }
                let diag = gab * (mu[a] + mu[b]) - bab * (nu[a] + nu[b]);
                h[(a, b)] += diag;
                h[(n + a, n + b)] += diag;
                let fe = bab * (mu[a] - mu[b]) + gab * (nu[a] - nu[b]);
                h[(n + a, b)] += fe;
                h[(b, n + a)] += fe;
            }
        }
        h
    }
}

/// Derivatives of a function of `r = e^2 + f^2` at one bus, given
/// `phi'(r)` and `phi''(r)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Radial {
    pub de: f64,
    pub df: f64,
    pub dee: f64,
    pub def: f64,
    pub dff: f64,
}

pub(crate) fn radial(e: f64, f: f64, d1: f64, d2: f64) -> Radial {
    Radial {
        de: 2.0 * e * d1,
        df: 2.0 * f * d1,
        dee: 4.0 * e * e * d2 + 2.0 * d1,
        def: 4.0 * e * f * d2,
        dff: 4.0 * f * f * d2 + 2.0 * d1,
    }
}

/// `c r^p` with its first two derivatives in `r`.
pub(crate) fn power_law(c: f64, p: f64, r: f64) -> (f64, f64, f64) {
    if p == 0.0 {
        return (c, 0.0, 0.0);
    }
    if p == 1.0 {
        return (c * r, c, 0.0);
    }
    let v = c * r.powf(p);
    (v, v * p / r, v * p * (p - 1.0) / (r * r))
}
