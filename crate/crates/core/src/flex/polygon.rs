//! Convex flexibility polygons in the `(ΔP, ΔQ)` plane.
//!
//! Each edge `i -> i+1` is stored as the half-plane
//! `α_i ΔP + β_i ΔQ + 1 >= 0`, which requires the origin (the current
//! operating point) to lie strictly inside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Pt = (f64, f64);

const CONTAINS_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlexPolygon {
    /// Counterclockwise vertices `(ΔP, ΔQ)` (MW, Mvar).
    pub vertices: Vec<Pt>,
    /// `(α, β)` of the edge starting at the vertex with the same index.
    pub half_planes: Vec<Pt>,
    /// PCC consumption `(P_j0, Q_j0)` the adjustments are relative to.
    pub origin_op: Pt,
}

/// Coefficients of the line through `a` and `b` written as
/// `α ΔP + β ΔQ + 1 = 0`.
pub fn half_plane_coeffs(a: Pt, b: Pt) -> Result<Pt> {
    let d = a.0 * b.1 - b.0 * a.1;
    let scale = (a.0.abs() + a.1.abs()) * (b.0.abs() + b.1.abs());
    if d.abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Geometry(format!(
            "edge ({:.6}, {:.6})-({:.6}, {:.6}) passes through the origin",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(((a.1 - b.1) / d, (b.0 - a.0) / d))
}

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn dist(a: Pt, b: Pt) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Counterclockwise convex hull without collinear points (monotone chain).
pub fn convex_hull(points: &[Pt]) -> Vec<Pt> {
    let mut pts: Vec<Pt> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let scale = pts
        .iter()
        .map(|p| p.0.abs().max(p.1.abs()))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let eps = 1e-12 * scale * scale;
    let mut hull: Vec<Pt> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Pt>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= eps {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Shoelace area of a simple polygon (positive when counterclockwise).
pub fn signed_area(v: &[Pt]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        / 2.0
}

fn point_segment_distance(p: Pt, a: Pt, b: Pt) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    dist(p, (a.0 + t * dx, a.1 + t * dy))
}

impl FlexPolygon {
    /// Polygon spanned by the convex hull of `points`.
    pub fn from_points(points: &[Pt], origin_op: Pt) -> Result<Self> {
        let vertices = convex_hull(points);
        if vertices.len() < 3 {
            return Err(Error::Geometry("fewer than three non-collinear points".into()));
        }
        Self::from_vertices(vertices, origin_op)
    }

    /// Builds the half-planes of counterclockwise convex `vertices`.
    pub fn from_vertices(vertices: Vec<Pt>, origin_op: Pt) -> Result<Self> {
        let n = vertices.len();
        let mut half_planes = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            if cross((0.0, 0.0), a, b) <= 0.0 {
                return Err(Error::Geometry(
                    "origin is not strictly inside the polygon".into(),
                ));
            }
            half_planes.push(half_plane_coeffs(a, b)?);
        }
        let poly = Self {
            vertices,
            half_planes,
            origin_op,
        };
        poly.check()?;
        Ok(poly)
    }

    /// The flexibility region of an ADN that cannot move: only `(0, 0)`.
    pub fn single_point(origin_op: Pt) -> Self {
        Self {
            vertices: vec![(0.0, 0.0)],
            half_planes: Vec::new(),
            origin_op,
        }
    }

    pub fn is_single_point(&self) -> bool {
        self.vertices.len() == 1
    }

    /// Verifies convexity, orientation, origin interiority and that every
    /// half-plane passes through its edge endpoints.
    pub fn check(&self) -> Result<()> {
        let v = &self.vertices;
        let n = v.len();
        if n == 1 && v[0] == (0.0, 0.0) && self.half_planes.is_empty() {
            return Ok(());
        }
        if n < 3 {
            return Err(Error::Geometry("polygon needs at least three vertices".into()));
        }
        if self.half_planes.len() != n {
            return Err(Error::Geometry("vertex and half-plane counts differ".into()));
        }
        for i in 0..n {
            if cross(v[i], v[(i + 1) % n], v[(i + 2) % n]) <= 0.0 {
                return Err(Error::Geometry("vertices are not strictly convex counterclockwise".into()));
            }
        }
        for (i, &(al, be)) in self.half_planes.iter().enumerate() {
            for p in [v[i], v[(i + 1) % n]] {
                let val = al * p.0 + be * p.1 + 1.0;
                if val.abs() > 1e-9 {
                    return Err(Error::Geometry(format!("half-plane {i} misses its edge by {val:.3e}")));
                }
            }
        }
        if (0..n).any(|i| cross((0.0, 0.0), v[i], v[(i + 1) % n]) <= 0.0) {
            return Err(Error::Geometry("origin is not strictly inside the polygon".into()));
        }
        Ok(())
    }

    /// Smallest `α ΔP + β ΔQ + 1` over all edges.
    pub fn min_slack(&self, dp: f64, dq: f64) -> f64 {
        if self.is_single_point() {
            return if dp == 0.0 && dq == 0.0 { 1.0 } else { -dp.hypot(dq) };
        }
        self.half_planes
            .iter()
            .map(|(a, b)| a * dp + b * dq + 1.0)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, dp: f64, dq: f64) -> bool {
        self.min_slack(dp, dq) >= -CONTAINS_TOL
    }

    pub fn area(&self) -> f64 {
        if self.vertices.len() < 3 {
            return 0.0;
        }
        signed_area(&self.vertices)
    }

    /// Largest distance between two vertices.
    pub fn diameter(&self) -> f64 {
        let v = &self.vertices;
        let mut d: f64 = 0.0;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                d = d.max(dist(v[i], v[j]));
            }
        }
        d
    }

    /// Euclidean distance from a point to the polygon region (0 inside).
    pub fn distance_to(&self, p: Pt) -> f64 {
        if self.contains(p.0, p.1) {
            return 0.0;
        }
        self.boundary_distance(p)
    }

    /// Distance from a point to the polygon boundary.
    pub fn boundary_distance(&self, p: Pt) -> f64 {
        let v = &self.vertices;
        let n = v.len();
        if n == 1 {
            return dist(p, v[0]);
        }
        (0..n)
            .map(|i| point_segment_distance(p, v[i], v[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Point where the ray from the origin along `(cos θ, sin θ)` leaves
    /// the polygon.
    pub fn ray_exit(&self, dir: Pt) -> Pt {
        let t = self
            .half_planes
            .iter()
            .filter_map(|(a, b)| {
                let s = -(a * dir.0 + b * dir.1);
                (s > 0.0).then(|| 1.0 / s)
            })
            .fold(f64::INFINITY, f64::min);
        (t * dir.0, t * dir.1)
    }

    /// Vertices as CSV with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,dP_MW,dQ_Mvar,alpha,beta\n");
        for (i, v) in self.vertices.iter().enumerate() {
            let (a, b) = self.half_planes.get(i).copied().unwrap_or((f64::NAN, f64::NAN));
            out.push_str(&format!("{i},{:.9},{:.9},{:.12e},{:.12e}\n", v.0, v.1, a, b));
        }
        out
    }
}

/// Whether `(ΔP, ΔQ)` satisfies every half-plane of the polygon.
pub fn polygon_contains(poly: &FlexPolygon, dp: f64, dq: f64) -> bool {
    poly.contains(dp, dq)
}

/// Symmetric Hausdorff distance between two convex polygon regions.
///
/// Distance to a convex region is convex, so its maximum over the other
/// polygon is attained at a vertex.
pub fn hausdorff(a: &FlexPolygon, b: &FlexPolygon) -> f64 {
    let one = |x: &FlexPolygon, y: &FlexPolygon| {
        x.vertices
            .iter()
            .map(|&p| y.distance_to(p))
            .fold(0.0, f64::max)
    };
    one(a, b).max(one(b, a))
}
