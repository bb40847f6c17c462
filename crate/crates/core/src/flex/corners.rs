//! Corner points of the flexibility region of a single-converter feeder.
//!
//! Each corner fixes two of the three controls at a limit (MV voltage held by
//! the LTC, converter terminal voltage, converter reactive output at its
//! current limit) and is solved as an ordinary power flow.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flex::feeder::FeederBase;
use crate::flex::polygon::{FlexPolygon, Pt};
use crate::model::NetworkCase;
use crate::powerflow::{IbgMode, SlackVoltage};

const LIMIT_TOL: f64 = 1e-9;
const COINCIDE_MW: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct CornerPoint {
    pub label: char,
    /// The two limits held at this corner.
    pub binding: [&'static str; 2],
    pub dp: f64,
    pub dq: f64,
    pub v_d: f64,
    pub v_g: f64,
    pub q_g: f64,
    pub tap: f64,
    pub feasible: bool,
    /// First violated limit, or the solver failure, when infeasible.
    pub reason: Option<String>,
    /// Label of an earlier feasible corner at the same place.
    pub coincides_with: Option<char>,
}

#[derive(Clone, Copy)]
enum Held {
    Vd(f64),
    Vg(f64),
}

/// Solves the six corner points `A..F` of a feeder with one converter.
pub fn corner_points_2bus(case: &NetworkCase) -> Result<Vec<CornerPoint>> {
    let base = FeederBase::new(case)?;
    if base.pf.ibgs.len() != 1 {
        return Err(Error::InvalidCase(format!(
            "corner points need exactly one converter, found {}",
            base.pf.ibgs.len()
        )));
    }
    let g_bus = base.pf.ibgs[0].bus;
    let v_lim = |k: usize| (case.buses[k].v_min, case.buses[k].v_max);
    let (d_min, d_max) = v_lim(base.mv_bus);
    let (g_min, g_max) = v_lim(g_bus);
    let absorb = IbgMode::CurrentLimit { sign: -1.0, v_set: None };
    let inject = IbgMode::CurrentLimit { sign: 1.0, v_set: None };
    let specs = [
        ('A', ["V_d_max", "V_g_max"], Held::Vd(d_max), IbgMode::Voltage(g_max)),
        ('B', ["V_d_max", "-Q_g_max"], Held::Vd(d_max), absorb),
        ('C', ["V_g_min", "-Q_g_max"], Held::Vg(g_min), absorb),
        ('D', ["V_d_min", "V_g_min"], Held::Vd(d_min), IbgMode::Voltage(g_min)),
        ('E', ["V_d_min", "Q_g_max"], Held::Vd(d_min), inject),
        ('F', ["V_g_max", "Q_g_max"], Held::Vg(g_max), inject),
    ];
    let mut out: Vec<CornerPoint> = Vec::with_capacity(6);
    for (label, binding, held, mode) in specs {
        let mut pt = solve_corner(&base, g_bus, label, held, mode);
        pt.binding = binding;
        if pt.feasible {
            pt.coincides_with = out
                .iter()
                .filter(|o| o.feasible && o.coincides_with.is_none())
                .find(|o| (o.dp - pt.dp).abs() < COINCIDE_MW && (o.dq - pt.dq).abs() < COINCIDE_MW)
                .map(|o| o.label);
        }
        out.push(pt);
    }
    Ok(out)
}

fn solve_corner(base: &FeederBase, g_bus: usize, label: char, held: Held, mode: IbgMode) -> CornerPoint {
    let mut pf = base.pf.clone();
    pf.slack_voltage = match held {
        Held::Vd(v) => SlackVoltage::Regulate { bus: base.mv_bus, v },
        Held::Vg(v) => SlackVoltage::Regulate { bus: g_bus, v },
    };
    pf.ibgs[0].mode = mode;
    let mut cp = CornerPoint {
        label,
        binding: ["", ""],
        dp: f64::NAN,
        dq: f64::NAN,
        v_d: f64::NAN,
        v_g: f64::NAN,
        q_g: f64::NAN,
        tap: f64::NAN,
        feasible: false,
        reason: None,
        coincides_with: None,
    };
    let solved = pf
        .solve(&base.point)
        .and_then(|pt| Ok((pf.slack_exchange(&pt)?, pf.ibg_q(&pt)?[0], pt)));
    let ((p, q), q_g, pt) = match solved {
        Ok(s) => s,
        Err(e) => {
            cp.reason = Some(e.to_string());
            return cp;
        }
    };
    cp.dp = p - base.p_j0;
    cp.dq = q - base.q_j0;
    cp.v_d = pt.vm(base.mv_bus);
    cp.v_g = pt.vm(g_bus);
    cp.q_g = q_g;
    cp.tap = base.v_pcc / pt.vm(pf.slack);
    let ibg = &pf.ibgs[0];
    let case = &base.case;
    let mut reason = None;
    for (k, b) in case.buses.iter().enumerate() {
        let v = pt.vm(k);
        if k != pf.slack && (v < b.v_min - LIMIT_TOL || v > b.v_max + LIMIT_TOL) {
            reason = Some(format!("V@{} = {v:.5} outside [{}, {}]", b.id, b.v_min, b.v_max));
            break;
        }
    }
    if reason.is_none() && (cp.tap < base.tap_min - LIMIT_TOL || cp.tap > base.tap_max + LIMIT_TOL) {
        reason = Some(format!("tap {:.5} outside [{}, {}]", cp.tap, base.tap_min, base.tap_max));
    }
    let s_lim = ibg.s_max * cp.v_g;
    if reason.is_none() && ibg.p.hypot(q_g) > s_lim * (1.0 + LIMIT_TOL) {
        reason = Some(format!("converter current {:.4} MVA above {s_lim:.4}", ibg.p.hypot(q_g)));
    }
    if reason.is_none() && matches!(mode, IbgMode::CurrentLimit { .. }) && ibg.p > s_lim {
        reason = Some("active output exceeds the current limit".into());
    }
    cp.feasible = reason.is_none();
    cp.reason = reason;
    cp
}

/// Flexibility polygon spanned by the distinct feasible corner points, or a
/// single point when fewer than three remain.
pub fn corner_polygon(points: &[CornerPoint], origin_op: Pt) -> Result<FlexPolygon> {
    let pts: Vec<Pt> = points
        .iter()
        .filter(|c| c.feasible && c.coincides_with.is_none())
        .map(|c| (c.dp, c.dq))
        .collect();
    if pts.len() < 3 {
        return Ok(FlexPolygon::single_point(origin_op));
    }
    FlexPolygon::from_points(&pts, origin_op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flex::feeder::tests::TABLE_II;
    use crate::model::parse_case;

    #[test]
    fn all_six_corners_feasible_for_table_ii() {
        let pts = corner_points_2bus(&parse_case(TABLE_II).unwrap()).unwrap();
        for c in &pts {
            assert!(c.feasible, "{}: {:?}", c.label, c.reason);
            assert!(c.coincides_with.is_none());
        }
        let a = &pts[0];
        assert!((a.v_d - 1.05).abs() < 1e-9 && (a.v_g - 1.05).abs() < 1e-9);
        let f = &pts[5];
        assert!((f.v_g - 1.05).abs() < 1e-9);
        assert!((97.2f64.hypot(f.q_g) - 120.0 * 1.05).abs() < 1e-6);
        let poly = corner_polygon(&pts, (600.0, 150.0)).unwrap();
        assert_eq!(poly.vertices.len(), 6);
        assert!(poly.contains(0.0, 0.0));
    }

    #[test]
    fn corners_match_closed_form_flow() {
        let case = parse_case(TABLE_II).unwrap();
        let pts = corner_points_2bus(&case).unwrap();
        // corner D: both voltages at 0.95, the load scales with V and V^2
        let d = &pts[3];
        let base = FeederBase::new(&case).unwrap();
        let (r, x) = (0.004413333, 0.0608);
        let z2 = r * r + x * x;
        let (g, b) = (r / z2, -x / z2);
        let v = 0.95;
        // angle of g relative to d from the converter's active balance
        let pg = 0.972;
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let p = g * v * v - v * v * (g * mid.cos() + b * mid.sin());
            if p < pg { lo = mid } else { hi = mid }
        }
        let th = 0.5 * (lo + hi);
        let p_dg = g * v * v - v * v * (g * th.cos() - b * th.sin());
        let q_dg = -b * v * v - v * v * (g * (-th).sin() - b * th.cos());
        let p_d = 6.96784 * v + p_dg;
        let q_d = 1.42471 * v * v + q_dg;
        let q_pcc = q_d + 0.0015 * (p_d * p_d + q_d * q_d) / (v * v);
        assert!((d.dp - (p_d * 100.0 - base.p_j0)).abs() < 1e-6, "{} vs {}", d.dp, p_d * 100.0 - base.p_j0);
        assert!((d.dq - (q_pcc * 100.0 - base.q_j0)).abs() < 1e-6, "{} vs {}", d.dq, q_pcc * 100.0 - base.q_j0);
    }

    #[test]
    fn collapsed_converter_voltage_range() {
        let text = TABLE_II.replace(
            r#""id": "g", "kind": "feeder-internal", "v_min": 0.95, "v_max": 1.05"#,
            r#""id": "g", "kind": "feeder-internal", "v_min": 1.0, "v_max": 1.0"#,
        );
        assert_ne!(text, TABLE_II);
        let pts = corner_points_2bus(&parse_case(&text).unwrap()).unwrap();
        // with V_g pinned the region degenerates to the segment between the
        // two current-limited corners
        let feasible: Vec<char> = pts.iter().filter(|c| c.feasible).map(|c| c.label).collect();
        assert_eq!(feasible, vec!['C', 'F'], "{pts:#?}");
        assert!((pts[2].dp - pts[5].dp).abs() > 1.0);
        let poly = corner_polygon(&pts, (600.0, 150.0)).unwrap();
        assert!(poly.is_single_point());
    }

    #[test]
    fn rejects_multi_converter_feeders() {
        let text = TABLE_II.replace(
            r#""q_g0": 0.0}"#,
            r#""q_g0": 0.0}, {"id": "g2", "bus": "g", "s_nom": 10, "p_g0": 1, "p_g_min": 1, "p_g_max": 1}"#,
        );
        assert!(corner_points_2bus(&parse_case(&text).unwrap()).is_err());
    }
}
