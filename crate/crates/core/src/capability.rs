//! Reactive power limits of synchronous machines.
//!
//! Two upper limits are modelled: the armature (stator) current limit, a
//! circle in the PQ plane, and the field current limit of a saturated
//! round-rotor machine, linearised between the point of maximum reactive
//! output at zero active power and the armature limit at rated power.
//! All powers are in MW/Mvar, voltages and reactances in machine pu.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapabilityParams {
    /// Rating (MVA).
    pub s_n: f64,
    /// Nominal voltage (pu).
    pub v_n: f64,
    /// Field current limit expressed as an emf (pu).
    pub e_lim: f64,
    /// Leakage reactance (pu).
    pub x_l: f64,
    /// Direct-axis mutual reactance (pu).
    pub x_ad: f64,
    /// Saturation coefficients of `K = 1 / (1 + m Vl^n)`.
    pub m: f64,
    pub n: f64,
    /// Rated active power (MW).
    pub p_n: f64,
}

const FIXED_POINT_TOL: f64 = 1e-10;
const FIXED_POINT_MAX_ITER: usize = 50;
const FIXED_POINT_DAMPING: f64 = 0.5;

impl CapabilityParams {
    /// Maximum stator current, `S_N / V_N`, in MVA per pu of voltage.
    pub fn i_n(&self) -> f64 {
        self.s_n / self.v_n
    }

    pub(crate) fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.s_n > 0.0 && self.v_n > 0.0) {
            out.push("capability rating and nominal voltage must be positive".to_string());
        }
        if !(self.x_ad > 0.0 && self.x_l >= 0.0) {
            out.push("capability reactances must be positive".to_string());
        }
        if !(self.p_n > 0.0 && self.p_n <= self.s_n * self.v_n) {
            out.push("rated active power must lie in (0, S_N V_N]".to_string());
        }
        out
    }

    /// Saturation factor for an air-gap voltage magnitude.
    pub fn saturation_factor(&self, v_l: f64) -> f64 {
        1.0 / (1.0 + self.m * v_l.powf(self.n))
    }

    /// Magnitude of the voltage behind the leakage reactance.
    pub fn air_gap_voltage(&self, p_g: f64, q_g: f64, v_g: f64) -> f64 {
        let p = p_g / self.s_n;
        let q = q_g / self.s_n;
        let re = v_g + self.x_l * q / v_g;
        let im = self.x_l * p / v_g;
        re.hypot(im)
    }
}

/// Armature current limit `sqrt((V I_N)^2 - P^2)`.
pub fn armature_limit(caps: &CapabilityParams, p_g: f64, v_g: f64) -> Result<f64> {
    let s = v_g * caps.i_n();
    let rem = s * s - p_g * p_g;
    if rem < 0.0 {
        return Err(Error::NoReactiveHeadroom {
            p_mw: p_g,
            bound_mva: s,
        });
    }
    Ok(rem.sqrt())
}

/// Field current limit curve with the saturation factor held fixed.
///
/// The curve is affine in `P` and smooth in `V`, which is what the
/// optimization and power flow need; the value and its first and second
/// derivatives are returned together.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldCurve {
    pub q: f64,
    pub dq_dv: f64,
    pub dq_dp: f64,
    pub d2q_dv2: f64,
    pub d2q_dvdp: f64,
}

pub fn field_curve(caps: &CapabilityParams, k: f64, p_g: f64, v_g: f64) -> Result<FieldCurve> {
    if !(v_g > 0.0) || !(caps.p_n > 0.0) {
        return Err(Error::InvalidCase(
            "field limit needs positive voltage and rated power".into(),
        ));
    }
    let e_qs = k * caps.e_lim;
    let x_ds = caps.x_l + k * caps.x_ad;
    let s_n = caps.s_n;
    let i_n = caps.i_n();

    let q_m = s_n * (e_qs * v_g - v_g * v_g) / x_ds;
    let q_m1 = s_n * (e_qs - 2.0 * v_g) / x_ds;
    let q_m2 = -2.0 * s_n / x_ds;

    let rem = (v_g * i_n).powi(2) - caps.p_n * caps.p_n;
    if rem <= 0.0 {
        return Err(Error::NoReactiveHeadroom {
            p_mw: caps.p_n,
            bound_mva: v_g * i_n,
        });
    }
    let s = rem.sqrt();
    let s1 = v_g * i_n * i_n / s;
    let s2 = -i_n * i_n * caps.p_n * caps.p_n / (s * s * s);

    let gamma = (q_m - s) / caps.p_n;
    let gamma1 = (q_m1 - s1) / caps.p_n;
    let gamma2 = (q_m2 - s2) / caps.p_n;

    Ok(FieldCurve {
        q: q_m - gamma * p_g,
        dq_dv: q_m1 - gamma1 * p_g,
        dq_dp: -gamma,
        d2q_dv2: q_m2 - gamma2 * p_g,
        d2q_dvdp: -gamma1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldLimit {
    /// Reactive limit (Mvar).
    pub q_max: f64,
    /// Saturation factor at the limit.
    pub k: f64,
    pub iterations: usize,
}

/// Field current limit of a saturated machine.
///
/// The saturation factor depends on the air-gap flux, which depends on the
/// reactive output being limited. The scalar fixed point
/// `Q = q_r(P, V; K(Vl(P, Q, V)))` is solved by damped iteration starting
/// from `q_g_est`.
pub fn field_limit(caps: &CapabilityParams, p_g: f64, v_g: f64, q_g_est: f64) -> Result<FieldLimit> {
    let mut q = q_g_est;
    for it in 1..=FIXED_POINT_MAX_ITER {
        let k = caps.saturation_factor(caps.air_gap_voltage(p_g, q, v_g));
        let target = field_curve(caps, k, p_g, v_g)?.q;
        let step = target - q;
        if step.abs() <= FIXED_POINT_TOL * q.abs().max(1.0) {
            return Ok(FieldLimit {
                q_max: target,
                k,
                iterations: it,
            });
        }
        q += FIXED_POINT_DAMPING * step;
    }
    Err(Error::SaturationDiverged(FIXED_POINT_MAX_ITER))
}

/// The binding upper reactive limit and which curve sets it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitKind {
    Armature,
    Field,
}

/// Lower of the two upper limits at `(P, V)` with saturation from the
/// fixed point.
pub fn reactive_limit(caps: &CapabilityParams, p_g: f64, v_g: f64) -> Result<(f64, LimitKind, f64)> {
    let qa = armature_limit(caps, p_g, v_g)?;
    let fl = field_limit(caps, p_g, v_g, qa)?;
    if fl.q_max < qa {
        Ok((fl.q_max, LimitKind::Field, fl.k))
    } else {
        Ok((qa, LimitKind::Armature, fl.k))
    }
}
