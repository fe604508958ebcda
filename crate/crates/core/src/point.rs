//! Pointwise genericity tests at a point `p`.
//!
//! Everything here is a function of the values `A_i(p)`: the collinearity
//! residuals of triples, the convex hull `K` of the values and its extreme
//! points, the dual cones of directions in which one harmonic part grows
//! fastest to first order, and the cone condition on the differences
//! `A_k(p) - A_j(p)`.

use std::cmp::Ordering;

use serde::Serialize;

use crate::analytic::{AnalyticFamily, C64};
use crate::error::PointError;

/// Relative tolerance for collinearity residuals (times `scale^2`) and value
/// coincidence (times `scale`).
pub const GENERICITY_TOL: f64 = 1e-9;

/// Relative tolerance for parallel/antipodal direction tests.
const ANGLE_TOL: f64 = 1e-12;

#[inline]
fn cross(a: C64, b: C64) -> f64 {
    a.re * b.im - a.im * b.re
}

#[inline]
fn dot(a: C64, b: C64) -> f64 {
    a.re * b.re + a.im * b.im
}

fn value_scale(values: &[C64]) -> f64 {
    values.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// `Im[(A_i - A_k) conj(A_j - A_k)]` at `z`.
///
/// Zero exactly when the three values are collinear; its magnitude is twice
/// the area of the triangle they span.
pub fn critical_residual(family: &AnalyticFamily, z: C64, i: usize, j: usize, k: usize) -> Result<f64, PointError> {
    if i == j || j == k || i == k {
        return Err(PointError::RepeatedIndex);
    }
    let (a, b, c) = (family.value(i, z)?, family.value(j, z)?, family.value(k, z)?);
    Ok(triple_residual(a, b, c))
}

fn triple_residual(a: C64, b: C64, c: C64) -> f64 {
    ((a - c) * (b - c).conj()).im
}

/// Shape of a closed convex cone of directions in the plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeKind {
    Point,
    Ray,
    Line,
    HalfPlane,
    Pointed,
    Full,
}

/// A closed convex cone in the plane with apex at the origin.
///
/// `directions` holds: the ray direction (ray), one of the two line
/// directions (line), the outward boundary normal (half-plane), or the two
/// edge directions in counter-clockwise order (pointed). All are unit vectors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cone2D {
    pub kind: ConeKind,
    pub directions: Vec<C64>,
    /// Arguments of `directions` in radians.
    pub edge_angles: Vec<f64>,
}

impl Cone2D {
    fn new(kind: ConeKind, directions: Vec<C64>) -> Self {
        let directions: Vec<C64> = directions.into_iter().map(|d| d / d.norm()).collect();
        let edge_angles = directions.iter().map(|d| d.arg()).collect();
        Self {
            kind,
            directions,
            edge_angles,
        }
    }

    /// Opening angle of a pointed cone, `None` otherwise.
    pub fn opening(&self) -> Option<f64> {
        (self.kind == ConeKind::Pointed).then(|| {
            let (a, b) = (self.directions[0], self.directions[1]);
            cross(a, b).atan2(dot(a, b))
        })
    }

    /// Membership of direction `v` with angular slack `tol` (radians, small).
    pub fn contains(&self, v: C64, tol: f64) -> bool {
        let n = v.norm();
        if n == 0.0 {
            return true;
        }
        let u = v / n;
        match self.kind {
            ConeKind::Full => true,
            ConeKind::Point => false,
            ConeKind::Ray => cross(self.directions[0], u).abs() <= tol && dot(self.directions[0], u) > 0.0,
            ConeKind::Line => cross(self.directions[0], u).abs() <= tol,
            ConeKind::HalfPlane => dot(self.directions[0], u) <= tol,
            ConeKind::Pointed => cross(self.directions[0], u) >= -tol && cross(u, self.directions[1]) >= -tol,
        }
    }
}

/// How the largest angular gap between a set of directions compares to `pi`.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Gap {
    /// All directions coincide.
    Single(C64),
    /// Gap larger than `pi`: the directions span a pointed cone from `first` to `last` (ccw).
    Wide { first: C64, last: C64 },
    /// Gap exactly `pi`, opening counter-clockwise from `start`.
    Straight { start: C64, end: C64 },
    /// All gaps below `pi`: the directions positively span the plane.
    Narrow,
}

fn parallel(a: C64, b: C64) -> bool {
    cross(a, b).abs() <= ANGLE_TOL * a.norm() * b.norm()
}

fn largest_gap(dirs: &[C64]) -> Gap {
    let mut sorted: Vec<C64> = dirs.to_vec();
    sorted.sort_by(|a, b| a.arg().partial_cmp(&b.arg()).unwrap_or(Ordering::Equal));
    let first = sorted[0];
    if sorted.iter().all(|&d| parallel(d, first) && dot(d, first) > 0.0) {
        return Gap::Single(first);
    }
    sorted.dedup_by(|b, a| parallel(*a, *b) && dot(*a, *b) > 0.0);
    let n = sorted.len();
    let mut best = (f64::NEG_INFINITY, 0);
    for k in 0..n {
        let a = sorted[k];
        let b = sorted[(k + 1) % n];
        let mut g = b.arg() - a.arg();
        if k + 1 == n {
            g += 2.0 * std::f64::consts::PI;
        }
        if g > best.0 {
            best = (g, k);
        }
    }
    let start = sorted[best.1];
    let end = sorted[(best.1 + 1) % n];
    if parallel(start, end) && dot(start, end) < 0.0 {
        Gap::Straight { start, end }
    } else if cross(start, end) < 0.0 {
        Gap::Wide {
            first: end,
            last: start,
        }
    } else {
        Gap::Narrow
    }
}

/// Cone `{v : <v, n> <= 0 for every n}` polar to the cone spanned by `normals`.
fn polar_cone(normals: &[C64]) -> Cone2D {
    if normals.is_empty() {
        return Cone2D::new(ConeKind::Full, vec![]);
    }
    let i = C64::new(0.0, 1.0);
    match largest_gap(normals) {
        Gap::Single(u) => Cone2D::new(ConeKind::HalfPlane, vec![u]),
        Gap::Wide { first, last } => Cone2D::new(ConeKind::Pointed, vec![i * last, -i * first]),
        Gap::Straight { start, end } => {
            let only_two = normals.iter().all(|&d| parallel(d, start));
            if only_two {
                Cone2D::new(ConeKind::Line, vec![i * start])
            } else {
                // the normals fill the half-plane ccw from `end` to `start`
                Cone2D::new(ConeKind::Ray, vec![-i * end])
            }
        }
        Gap::Narrow => Cone2D::new(ConeKind::Point, vec![]),
    }
}

fn check_index(family: &AnalyticFamily, i: usize) -> Result<(), PointError> {
    family.member(i)?;
    Ok(())
}

fn dual_cone_of(values: &[C64], indices: &[usize], i: usize) -> Result<Cone2D, PointError> {
    let tol = GENERICITY_TOL * value_scale(values);
    let mut normals = Vec::with_capacity(indices.len());
    for &j in indices.iter().filter(|&&j| j != i) {
        let d = values[j] - values[i];
        if d.norm() <= tol {
            return Err(PointError::DuplicateValue(i.min(j), i.max(j)));
        }
        // Re[v d] = <v, conj(d)>
        normals.push(d.conj());
    }
    Ok(polar_cone(&normals))
}

/// The cone of directions `v` with `Re[v (A_j(p) - A_i(p))] <= 0` for all `j != i`.
pub fn dual_cone(family: &AnalyticFamily, p: C64, i: usize) -> Result<Cone2D, PointError> {
    check_index(family, i)?;
    let all: Vec<usize> = (0..family.len()).collect();
    dual_cone_of(&family.values_at(p), &all, i)
}

/// Whether `0` lies outside the conical hull of `{A_k(p) - A_j(p) : j in active, j != k}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VkCone {
    pub excludes_origin: bool,
    /// Set when some generator vanishes, which puts `0` in the cone trivially.
    pub duplicate: Option<(usize, usize)>,
}

fn vk_of(values: &[C64], k: usize, active: &[usize]) -> VkCone {
    let tol = GENERICITY_TOL * value_scale(values);
    let mut gens = Vec::new();
    for &j in active.iter().filter(|&&j| j != k) {
        let g = values[k] - values[j];
        if g.norm() <= tol {
            return VkCone {
                excludes_origin: false,
                duplicate: Some((k.min(j), k.max(j))),
            };
        }
        gens.push(g);
    }
    let excludes_origin = match gens.is_empty() {
        true => true,
        false => matches!(largest_gap(&gens), Gap::Single(_) | Gap::Wide { .. }),
    };
    VkCone {
        excludes_origin,
        duplicate: None,
    }
}

/// Cone test on the differences `A_k(p) - A_j(p)` over the active set.
///
/// Returns `excludes_origin = true` iff all differences fit in an open half-plane.
pub fn vk_cone_test(family: &AnalyticFamily, p: C64, k: usize, active: &[usize]) -> Result<VkCone, PointError> {
    for &j in active {
        check_index(family, j)?;
    }
    check_index(family, k)?;
    Ok(vk_of(&family.values_at(p), k, active))
}

/// Convex hull of a set of values and the classification of each index.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HullProfile {
    /// Hull vertices in counter-clockwise order (one or two for degenerate hulls).
    pub vertices: Vec<C64>,
    pub extreme: Vec<usize>,
    pub boundary_non_extreme: Vec<usize>,
    pub interior: Vec<usize>,
    /// The hull is a segment (all values collinear, at least two distinct).
    pub segment: bool,
}

fn convex_hull(points: &[C64], cross_tol: f64) -> Vec<C64> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap_or(Ordering::Equal)
            .then(a.im.partial_cmp(&b.im).unwrap_or(Ordering::Equal))
    });
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let turn = |o: C64, a: C64, b: C64| cross(a - o, b - o);
    let mut lower: Vec<C64> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && turn(lower[lower.len() - 2], lower[lower.len() - 1], p) <= cross_tol {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<C64> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && turn(upper[upper.len() - 2], upper[upper.len() - 1], p) <= cross_tol {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn distance_to_segment(z: C64, a: C64, b: C64) -> f64 {
    let d = b - a;
    let len2 = d.norm_sqr();
    if len2 == 0.0 {
        return (z - a).norm();
    }
    let t = (dot(z - a, d) / len2).clamp(0.0, 1.0);
    (z - (a + d * t)).norm()
}

fn hull_profile_of(values: &[C64], indices: &[usize]) -> HullProfile {
    let scale = value_scale(values);
    let tol = GENERICITY_TOL * scale;
    let pts: Vec<C64> = indices.iter().map(|&i| values[i]).collect();
    let mut vertices = convex_hull(&pts, GENERICITY_TOL * scale * scale);
    // collapse hull vertices closer than the coincidence tolerance
    let mut collapsed: Vec<C64> = Vec::new();
    for v in vertices.drain(..) {
        if collapsed.iter().all(|w| (v - w).norm() > tol) {
            collapsed.push(v);
        }
    }
    let vertices = collapsed;
    let segment = vertices.len() == 2;
    let mut profile = HullProfile {
        vertices: vertices.clone(),
        extreme: vec![],
        boundary_non_extreme: vec![],
        interior: vec![],
        segment,
    };
    let n = vertices.len();
    for &i in indices {
        let v = values[i];
        if vertices.iter().any(|w| (v - w).norm() <= tol) {
            profile.extreme.push(i);
            continue;
        }
        let on_boundary = match n {
            0 | 1 => false,
            2 => distance_to_segment(v, vertices[0], vertices[1]) <= tol,
            _ => (0..n).any(|k| distance_to_segment(v, vertices[k], vertices[(k + 1) % n]) <= tol),
        };
        if on_boundary {
            profile.boundary_non_extreme.push(i);
        } else {
            profile.interior.push(i);
        }
    }
    profile
}

/// Hull of all values `A_i(p)` with each index classified as extreme,
/// boundary-but-not-extreme, or interior.
pub fn convex_hull_profile(family: &AnalyticFamily, p: C64) -> HullProfile {
    let all: Vec<usize> = (0..family.len()).collect();
    hull_profile_of(&family.values_at(p), &all)
}

/// Named genericity flags at a point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GenericityFlags {
    /// Every active member's region accumulates at `p` and all members are active.
    pub thm15_i: bool,
    /// No active triple has collinear values.
    pub thm15_ii: bool,
    /// Active values are pairwise distinct.
    pub thm15_iii: bool,
    /// No active value lies on the hull boundary without being extreme.
    pub cor17: bool,
    /// Every active `k` has `0` outside the cone of differences.
    pub thm61_ii: bool,
}

impl GenericityFlags {
    pub fn all(&self) -> bool {
        self.thm15_i && self.thm15_ii && self.thm15_iii && self.cor17 && self.thm61_ii
    }
}

/// Which index set the flags were evaluated on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveConvention {
    AllMembers,
    Restricted,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointProfile {
    pub point: C64,
    pub values: Vec<C64>,
    pub active: Vec<usize>,
    pub convention: ActiveConvention,
    pub hull: HullProfile,
    /// Dual cone of each active index within the active set; `None` on coincident values.
    pub cones: Vec<(usize, Option<Cone2D>)>,
    pub flags: GenericityFlags,
}

/// Full genericity report at `p` for the caller's active set.
///
/// `closure_evidence` states whether every member's region was observed to
/// accumulate at `p`; `thm15_i` takes its value when the active set is all
/// members and is false otherwise.
pub fn genericity_report(
    family: &AnalyticFamily,
    p: C64,
    active: &[usize],
    closure_evidence: bool,
) -> Result<PointProfile, PointError> {
    if active.is_empty() {
        return Err(PointError::EmptyActiveSet);
    }
    let mut active = active.to_vec();
    active.sort_unstable();
    active.dedup();
    for &i in &active {
        check_index(family, i)?;
    }
    let values = family.values_at(p);
    let scale = value_scale(&values);
    let res_tol = GENERICITY_TOL * scale * scale;
    let dist_tol = GENERICITY_TOL * scale;

    let mut thm15_ii = true;
    for (x, &i) in active.iter().enumerate() {
        for (y, &j) in active.iter().enumerate().skip(x + 1) {
            for &k in active.iter().skip(y + 1) {
                if triple_residual(values[i], values[j], values[k]).abs() <= res_tol {
                    thm15_ii = false;
                }
            }
        }
    }
    let thm15_iii = active.iter().enumerate().all(|(x, &i)| {
        active
            .iter()
            .skip(x + 1)
            .all(|&j| (values[i] - values[j]).norm() > dist_tol)
    });
    let hull = hull_profile_of(&values, &active);
    let cor17 = hull.boundary_non_extreme.is_empty();
    let thm61_ii = active.len() < 2 || active.iter().all(|&k| vk_of(&values, k, &active).excludes_origin);
    let cones = active
        .iter()
        .map(|&i| (i, dual_cone_of(&values, &active, i).ok()))
        .collect();
    let convention = if active.len() == family.len() {
        ActiveConvention::AllMembers
    } else {
        ActiveConvention::Restricted
    };
    Ok(PointProfile {
        point: p,
        values,
        active,
        convention,
        hull,
        cones,
        flags: GenericityFlags {
            thm15_i: closure_evidence && convention == ActiveConvention::AllMembers,
            thm15_ii,
            thm15_iii,
            cor17,
            thm61_ii,
        },
    })
}
