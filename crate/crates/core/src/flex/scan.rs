//! Radial scan of the flexibility region and polygon reduction.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flex::feeder::{ExtraConstraint, FeederBase, FeederObjective, FeederOpf};
use crate::flex::polygon::{convex_hull, half_plane_coeffs, FlexPolygon, Pt};
use crate::model::NetworkCase;
use crate::nlp::NlpOptions;

const DEDUP_MW: f64 = 1e-6;
const MAX_FAILURE_SHARE: f64 = 0.2;
const OUTSIDE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Max,
    Min,
}

impl Sense {
    fn sign(self) -> f64 {
        match self {
            Sense::Max => 1.0,
            Sense::Min => -1.0,
        }
    }
}

/// Boundary point of the flexibility region on the line through the origin
/// at angle `theta_deg`.
#[derive(Clone, Debug, Serialize)]
pub struct ScanPoint {
    pub theta_deg: f64,
    pub sense: Sense,
    pub dp: f64,
    pub dq: f64,
    /// Constraints binding at the optimum.
    pub binding: Vec<String>,
}

/// Extreme point of the region along `sign (cos θ, sin θ)`.
pub fn fr_boundary_point(
    base: &FeederBase,
    theta_deg: f64,
    sense: Sense,
    extra: &[Box<dyn ExtraConstraint>],
    opts: &NlpOptions,
) -> Result<ScanPoint> {
    boundary_from(base, theta_deg, sense, extra, opts, None).map(|(p, _)| p)
}

fn boundary_from(
    base: &FeederBase,
    theta_deg: f64,
    sense: Sense,
    extra: &[Box<dyn ExtraConstraint>],
    opts: &NlpOptions,
    start: Option<&[f64]>,
) -> Result<(ScanPoint, Vec<f64>)> {
    let t = theta_deg.to_radians();
    let dir = (t.cos(), t.sin());
    let opf = FeederOpf::new(base, FeederObjective::Direction { dir, sign: sense.sign() }, Some(dir), extra)?;
    let sol = opf.solve(start.unwrap_or(opf.base_start()), opts);
    if !sol.is_optimal() {
        return Err(Error::Optimization(format!(
            "boundary at {theta_deg} deg ({sense:?}): {}",
            sol.diagnostic()
        )));
    }
    let (dp, dq) = opf.pcc_change(&sol.x);
    let point = ScanPoint {
        theta_deg,
        sense,
        dp,
        dq,
        binding: opf.binding(&sol, 1e-6),
    };
    Ok((point, sol.x))
}

#[derive(Clone, Debug)]
pub struct ScanOptions {
    pub dtheta_deg: f64,
    pub parallel: bool,
    pub nlp: NlpOptions,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            dtheta_deg: 3.0,
            parallel: true,
            nlp: NlpOptions::from_env(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanResult {
    /// Distinct boundary points in scan order.
    pub points: Vec<ScanPoint>,
    /// Directions that failed, with the reason.
    pub failures: Vec<String>,
    pub attempts: usize,
}

impl ScanResult {
    pub fn coords(&self) -> Vec<Pt> {
        self.points.iter().map(|p| (p.dp, p.dq)).collect()
    }
}

/// Scans `θ = 0, Δθ, ..., 180°` in both senses.
pub fn radial_scan(
    case: &NetworkCase,
    extra: &[Box<dyn ExtraConstraint>],
    opts: &ScanOptions,
) -> Result<(FeederBase, ScanResult)> {
    if !(opts.dtheta_deg > 0.0 && opts.dtheta_deg <= 90.0) {
        return Err(Error::InvalidCase(format!("angular step {} deg", opts.dtheta_deg)));
    }
    let base = FeederBase::new(case)?;
    let steps = (180.0 / opts.dtheta_deg).round() as usize;
    let jobs: Vec<(f64, Sense)> = (0..=steps)
        .flat_map(|i| {
            let th = (i as f64 * opts.dtheta_deg).min(180.0);
            [(th, Sense::Max), (th, Sense::Min)]
        })
        .collect();
    let run = |&(th, s): &(f64, Sense)| boundary_from(&base, th, s, extra, &opts.nlp, None);
    let mut results: Vec<Result<(ScanPoint, Vec<f64>)>> = if opts.parallel {
        jobs.par_iter().map(run).collect()
    } else {
        jobs.iter().map(run).collect()
    };
    // retry failed directions from the nearest converged directions of the
    // same sense; nearly degenerate vertices often need a nearby start
    for i in 0..jobs.len() {
        if results[i].is_ok() {
            continue;
        }
        let (th, sense) = jobs[i];
        let mut near: Vec<usize> = (0..jobs.len())
            .filter(|&j| jobs[j].1 == sense && results[j].is_ok())
            .collect();
        near.sort_by(|&a, &b| (jobs[a].0 - th).abs().total_cmp(&(jobs[b].0 - th).abs()));
        for j in near.into_iter().take(2) {
            let x0 = results[j].as_ref().map(|r| r.1.clone()).expect("converged");
            if let Ok(r) = boundary_from(&base, th, sense, extra, &opts.nlp, Some(&x0)) {
                results[i] = Ok(r);
                break;
            }
        }
    }
    let mut points: Vec<ScanPoint> = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok((p, _)) => {
                let dup = points
                    .iter()
                    .any(|o| (o.dp - p.dp).abs() < DEDUP_MW && (o.dq - p.dq).abs() < DEDUP_MW);
                if !dup {
                    points.push(p);
                }
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    let attempts = jobs.len();
    if failures.len() as f64 > MAX_FAILURE_SHARE * attempts as f64 {
        return Err(Error::Optimization(format!(
            "{} of {attempts} boundary solves failed; first: {}",
            failures.len(),
            failures[0]
        )));
    }
    if points.len() < 3 {
        return Err(Error::Geometry(format!("only {} distinct boundary points", points.len())));
    }
    Ok((base, ScanResult { points, failures, attempts }))
}

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Signed outward distance of `p` from the directed edge `a -> b` of a
/// counterclockwise polygon; positive outside.
fn outside_distance(a: Pt, b: Pt, p: Pt) -> f64 {
    -cross(a, b, p) / (b.0 - a.0).hypot(b.1 - a.1)
}

/// Farthest exterior point across one edge. When the half-plane form of the
/// edge exists, ranking by `-(α p + β q + 1)` alone picks the same point,
/// since the two measures differ by the constant edge norm.
fn farthest_across(a: Pt, b: Pt, pts: &[Pt]) -> Option<(usize, f64)> {
    let best = pts
        .iter()
        .enumerate()
        .map(|(i, &p)| (i, outside_distance(a, b, p)))
        .filter(|&(_, d)| d > OUTSIDE_TOL)
        .max_by(|x, y| x.1.total_cmp(&y.1));
    if let (Some((i, _)), Ok((al, be))) = (best, half_plane_coeffs(a, b)) {
        if cross(a, b, (0.0, 0.0)) > 0.0 {
            let raw = pts
                .iter()
                .enumerate()
                .map(|(j, p)| (j, -(al * p.0 + be * p.1 + 1.0)))
                .filter(|&(j, _)| outside_distance(a, b, pts[j]) > OUTSIDE_TOL)
                .max_by(|x, y| x.1.total_cmp(&y.1))
                .map(|(j, _)| j);
            debug_assert!(
                raw.is_none_or(|j| j == i || (outside_distance(a, b, pts[j]) - outside_distance(a, b, pts[i])).abs() < 1e-12),
                "edge ranking depends on the distance normalization"
            );
        }
    }
    best
}

fn initial_triangle(points: &[Pt]) -> Result<Vec<Pt>> {
    let arg = |key: &dyn Fn(&Pt) -> f64, max: bool| {
        let it = points.iter().copied();
        if max {
            it.max_by(|a, b| key(a).total_cmp(&key(b)))
        } else {
            it.min_by(|a, b| key(a).total_cmp(&key(b)))
        }
        .expect("non-empty")
    };
    let q_lo = arg(&|p| p.1, false);
    let q_hi = arg(&|p| p.1, true);
    let mut third = arg(&|p| p.0, false);
    let same = |a: Pt, b: Pt| (a.0 - b.0).abs() < DEDUP_MW && (a.1 - b.1).abs() < DEDUP_MW;
    if same(third, q_lo) || same(third, q_hi) {
        third = arg(&|p| p.0, true);
    }
    let mut tri = vec![q_lo, q_hi, third];
    let area = cross(tri[0], tri[1], tri[2]);
    if area.abs() < 1e-12 * (1.0 + q_hi.1 - q_lo.1).powi(2) {
        return Err(Error::Geometry("boundary points are collinear".into()));
    }
    if area < 0.0 {
        tri.swap(1, 2);
    }
    Ok(tri)
}

/// Reduces boundary points to a convex polygon of at most `target` vertices
/// by repeatedly adding the point farthest outside the current polygon.
pub fn reduce_polygon(points: &[Pt], target: usize, origin_op: Pt) -> Result<FlexPolygon> {
    if target < 3 {
        return Err(Error::Geometry(format!("target of {target} vertices")));
    }
    if points.len() < 3 {
        return Err(Error::Geometry(format!("only {} points", points.len())));
    }
    let mut poly = initial_triangle(points)?;
    while poly.len() < target {
        let n = poly.len();
        let best = (0..n)
            .filter_map(|k| farthest_across(poly[k], poly[(k + 1) % n], points))
            .max_by(|x, y| x.1.total_cmp(&y.1));
        let Some((i, _)) = best else { break };
        let mut next = poly.clone();
        next.push(points[i]);
        poly = convex_hull(&next);
    }
    FlexPolygon::from_vertices(poly, origin_op)
}

/// Everything needed to reproduce or audit a computed region.
#[derive(Clone, Debug, Serialize)]
pub struct FrReport {
    pub case: String,
    pub method: String,
    pub dtheta_deg: Option<f64>,
    pub p_j0: f64,
    pub q_j0: f64,
    pub area: f64,
    pub polygon: FlexPolygon,
    pub scan: Option<ScanResult>,
}

impl FrReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
