//! Level curves `{H_i - H_j = c}` and the interface graph of a labeling.
//!
//! Curves are traced by predictor-corrector continuation: a step along the
//! unit tangent `i conj(A_i - A_j) / |A_i - A_j|` followed by Newton
//! corrections along the gradient `conj(A_i - A_j)` of `H_i - H_j`.

use std::collections::HashMap;
use std::io::{self, Write};

use serde::Serialize;

use crate::analytic::{AnalyticFamily, Rect, C64};
use crate::error::CurveError;
use crate::field::{CellLabel, GridWindow, RegionLabeling};

const MAX_CORRECTOR_STEPS: usize = 5;
const MAX_SEED_STEPS: usize = 50;
const BISECTION_STEPS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceParams {
    /// Predictor step length.
    pub step: f64,
    /// Allowed `|H_i - H_j - c|` at every vertex.
    pub curve_tol: f64,
    /// Smallest `|A_i - A_j|` accepted along the trace.
    pub grad_floor: f64,
    pub max_vertices: usize,
}

impl TraceParams {
    /// Half-cell steps; tolerances scaled by the window diagonal and the gradient bound.
    pub fn for_grid(family: &AnalyticFamily, grid: &GridWindow) -> Self {
        let g = family.gradient_bound().max(f64::MIN_POSITIVE);
        Self {
            step: grid.h() / 2.0,
            curve_tol: 1e-10 * family.window().diagonal() * g,
            grad_floor: 1e-6 * g,
            max_vertices: 1_000_000,
        }
    }

    pub fn with_step(self, step: f64) -> Self {
        Self { step, ..self }
    }
}

/// Polyline on a level set of `H_i - H_j`, with the interface density `|A_i - A_j| / 2` at each vertex.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelCurve {
    pub pair: (usize, usize),
    pub level: f64,
    pub vertices: Vec<C64>,
    pub arclength: Vec<f64>,
    pub densities: Vec<f64>,
    /// The last vertex connects back to the first.
    pub closed: bool,
}

impl LevelCurve {
    /// Builds a curve from vertices, recomputing arclength and densities.
    pub fn from_vertices(
        family: &AnalyticFamily,
        pair: (usize, usize),
        level: f64,
        vertices: Vec<C64>,
        closed: bool,
    ) -> Self {
        let mut arclength = Vec::with_capacity(vertices.len());
        let mut s = 0.0;
        for (k, v) in vertices.iter().enumerate() {
            if k > 0 {
                s += (v - vertices[k - 1]).norm();
            }
            arclength.push(s);
        }
        let densities = vertices
            .iter()
            .map(|&v| (family.a(pair.0, v) - family.a(pair.1, v)).norm() / 2.0)
            .collect();
        Self {
            pair,
            level,
            vertices,
            arclength,
            densities,
            closed,
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Segments as `(start, end, density_start, density_end)`, including the closing segment.
    pub fn segments(&self) -> impl Iterator<Item = (C64, C64, f64, f64)> + '_ {
        let n = self.vertices.len();
        let count = match (self.closed, n) {
            (_, 0 | 1) => 0,
            (true, _) => n,
            (false, _) => n - 1,
        };
        (0..count).map(move |k| {
            let m = (k + 1) % n;
            (self.vertices[k], self.vertices[m], self.densities[k], self.densities[m])
        })
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b, _, _)| (b - a).norm()).sum()
    }

    /// `int density ds` by the trapezoid rule.
    pub fn mass(&self) -> f64 {
        self.segments()
            .map(|(a, b, da, db)| (b - a).norm() * (da + db) / 2.0)
            .sum()
    }

    /// Largest distance between consecutive vertices.
    pub fn max_spacing(&self) -> f64 {
        self.segments().map(|(a, b, _, _)| (b - a).norm()).fold(0.0, f64::max)
    }

    /// Distance from `z` to the polyline.
    pub fn distance(&self, z: C64) -> f64 {
        if self.vertices.len() == 1 {
            return (z - self.vertices[0]).norm();
        }
        self.segments()
            .map(|(a, b, _, _)| segment_distance(z, a, b).0)
            .fold(f64::INFINITY, f64::min)
    }

    /// CSV with columns `x,y,s,density`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x,y,s,density")?;
        for ((v, s), d) in self.vertices.iter().zip(&self.arclength).zip(&self.densities) {
            writeln!(out, "{},{},{},{}", v.re, v.im, s, d)?;
        }
        Ok(())
    }
}

/// Distance from `z` to segment `[a, b]` and the clamped foot parameter in `[0, 1]`.
pub(crate) fn segment_distance(z: C64, a: C64, b: C64) -> (f64, f64) {
    let d = b - a;
    let len2 = d.norm_sqr();
    if len2 == 0.0 {
        return ((z - a).norm(), 0.0);
    }
    let t = (((z - a) * d.conj()).re / len2).clamp(0.0, 1.0);
    ((z - (a + d * t)).norm(), t)
}

struct Tracer<'a> {
    family: &'a AnalyticFamily,
    i: usize,
    j: usize,
    level: f64,
    params: TraceParams,
    window: Rect,
}

impl Tracer<'_> {
    fn g(&self, z: C64) -> f64 {
        self.family.h(self.i, z) - self.family.h(self.j, z) - self.level
    }

    fn diff(&self, z: C64) -> C64 {
        self.family.a(self.i, z) - self.family.a(self.j, z)
    }

    fn tangent(&self, z: C64) -> Result<C64, CurveError> {
        let d = self.diff(z);
        let n = d.norm();
        if n < self.params.grad_floor {
            return Err(CurveError::SingularPoint {
                at: z,
                gradient: n,
                floor: self.params.grad_floor,
            });
        }
        Ok(C64::new(0.0, 1.0) * d.conj() / n)
    }

    /// Newton projection onto the level set along the gradient.
    fn project(&self, mut z: C64, max_steps: usize) -> Result<C64, CurveError> {
        for _ in 0..max_steps {
            let gv = self.g(z);
            if gv.abs() <= self.params.curve_tol {
                return Ok(z);
            }
            let grad = self.diff(z).conj();
            let n2 = grad.norm_sqr();
            if n2.sqrt() < self.params.grad_floor {
                return Err(CurveError::SingularPoint {
                    at: z,
                    gradient: n2.sqrt(),
                    floor: self.params.grad_floor,
                });
            }
            z -= grad * (gv / n2);
        }
        if self.g(z).abs() <= self.params.curve_tol {
            Ok(z)
        } else {
            Err(CurveError::StepTooLarge {
                at: z,
                step: self.params.step,
            })
        }
    }

    /// Point where the curve leaves the window between inside `a` and outside `b`.
    fn exit_point(&self, a: C64, b: C64) -> C64 {
        let w = self.window;
        let mut t_exit = 1.0f64;
        let mut vertical = true;
        let d = b - a;
        for (bound, coord_a, coord_d, is_vertical) in [
            (w.min.re, a.re, d.re, true),
            (w.max.re, a.re, d.re, true),
            (w.min.im, a.im, d.im, false),
            (w.max.im, a.im, d.im, false),
        ] {
            if coord_d != 0.0 {
                let t = (bound - coord_a) / coord_d;
                if (0.0..t_exit).contains(&t) {
                    t_exit = t;
                    vertical = is_vertical;
                }
            }
        }
        let mut z = a + d * t_exit;
        // Newton along the boundary edge
        for _ in 0..20 {
            let gv = self.g(z);
            if gv.abs() <= self.params.curve_tol {
                break;
            }
            let grad = self.diff(z).conj();
            let slope = if vertical { grad.im } else { grad.re };
            if slope.abs() < self.params.grad_floor {
                break;
            }
            let moved = if vertical {
                C64::new(z.re, (z.im - gv / slope).clamp(w.min.im, w.max.im))
            } else {
                C64::new((z.re - gv / slope).clamp(w.min.re, w.max.re), z.im)
            };
            if moved == z {
                break;
            }
            z = moved;
        }
        z
    }

    /// Marches from `start` along `sign * tangent`; returns the vertices and whether the trace closed.
    fn march(&self, start: C64, sign: f64, detect_loop: bool) -> Result<(Vec<C64>, bool), CurveError> {
        let step = self.params.step;
        let mut pts = vec![start];
        let start_tangent = self.tangent(start)? * sign;
        let mut prev_t = start_tangent;
        loop {
            let z = *pts.last().unwrap();
            let mut t = self.tangent(z)?;
            if (t * prev_t.conj()).re < 0.0 {
                t = -t;
            }
            let next = self.project(z + t * step, MAX_CORRECTOR_STEPS)?;
            if !self.window.contains(next) {
                let b = self.exit_point(z, next);
                let gap = (b - z).norm();
                if gap > 1e-9 * step {
                    if gap < step / 2.0 && pts.len() >= 2 {
                        *pts.last_mut().unwrap() = b;
                    } else {
                        pts.push(b);
                    }
                }
                return Ok((pts, false));
            }
            if detect_loop && pts.len() >= 4 && (t * start_tangent.conj()).re > 0.0 {
                let (dist, _) = segment_distance(start, z, next);
                if dist <= step / 2.0 {
                    if (z - start).norm() < step / 2.0 {
                        pts.pop();
                    }
                    return Ok((pts, true));
                }
            }
            pts.push(next);
            prev_t = t;
            if pts.len() > self.params.max_vertices {
                return Err(CurveError::TooManyVertices(self.params.max_vertices));
            }
        }
    }

    fn trace(&self, seed: C64) -> Result<LevelCurve, CurveError> {
        if !self.window.contains(seed) {
            return Err(CurveError::SeedOutsideWindow(seed));
        }
        let start = self.project(seed, MAX_SEED_STEPS)?;
        if !self.window.contains(start) {
            return Err(CurveError::SeedOutsideWindow(start));
        }
        let (fwd, closed) = self.march(start, 1.0, true)?;
        let vertices = if closed {
            fwd
        } else {
            let (bwd, _) = self.march(start, -1.0, false)?;
            let mut v: Vec<C64> = bwd.into_iter().skip(1).rev().collect();
            v.extend(fwd);
            v
        };
        Ok(LevelCurve::from_vertices(
            self.family,
            (self.i, self.j),
            self.level,
            vertices,
            closed,
        ))
    }

    /// Point on the level set between `a` (margin >= 0) and `b` (margin < 0) where the margin vanishes.
    fn refine_crossing(&self, a: C64, b: C64, margin: &dyn Fn(C64) -> f64) -> C64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let at = |t: f64| {
            let q = a + (b - a) * t;
            self.project(q, MAX_CORRECTOR_STEPS).unwrap_or(q)
        };
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if margin(at(mid)) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(lo)
    }

    /// Splits a traced curve into the runs where `margin >= 0`, with refined end points.
    fn restrict(&self, curve: &LevelCurve, margin: &dyn Fn(C64) -> f64) -> Vec<LevelCurve> {
        let n = curve.vertices.len();
        let signs: Vec<bool> = curve.vertices.iter().map(|&v| margin(v) >= 0.0).collect();
        if signs.iter().all(|&s| s) {
            return vec![curve.clone()];
        }
        // closed curves are rotated to start outside the kept set
        let order: Vec<usize> = if curve.closed {
            let first_out = signs.iter().position(|&s| !s).unwrap();
            (0..=n).map(|k| (first_out + k) % n).collect()
        } else {
            (0..n).collect()
        };
        let half = self.params.step / 2.0;
        let mut pieces = Vec::new();
        let mut run: Vec<C64> = Vec::new();
        for w in 0..order.len() {
            let k = order[w];
            let v = curve.vertices[k];
            if signs[k] {
                if run.is_empty() && w > 0 {
                    let prev = curve.vertices[order[w - 1]];
                    run.push(self.refine_crossing(v, prev, margin));
                    if (run[0] - v).norm() < half {
                        continue;
                    }
                }
                run.push(v);
            } else if !run.is_empty() {
                let last = *run.last().unwrap();
                let end = self.refine_crossing(last, v, margin);
                if (end - last).norm() < half && run.len() >= 2 {
                    *run.last_mut().unwrap() = end;
                } else {
                    run.push(end);
                }
                pieces.push(std::mem::take(&mut run));
            }
        }
        if !run.is_empty() {
            pieces.push(run);
        }
        pieces
            .into_iter()
            .filter(|p| p.len() >= 2)
            .map(|p| LevelCurve::from_vertices(self.family, curve.pair, curve.level, p, false))
            .filter(|c| c.length() > 1e-3 * self.params.step)
            .collect()
    }
}

/// Traces `{H_i - H_j = level}` through `seed` in both directions until it leaves `window` or closes.
pub fn trace_level_curve(
    family: &AnalyticFamily,
    i: usize,
    j: usize,
    seed: C64,
    level: f64,
    params: TraceParams,
    window: Rect,
) -> Result<LevelCurve, CurveError> {
    family.member(i)?;
    family.member(j)?;
    Tracer {
        family,
        i,
        j,
        level,
        params,
        window,
    }
    .trace(seed)
}

/// Splits `curve` into the runs where `margin(z) >= 0`; run ends are located by bisection on the curve.
pub fn restrict_curve(
    family: &AnalyticFamily,
    curve: &LevelCurve,
    params: TraceParams,
    margin: &dyn Fn(C64) -> f64,
) -> Vec<LevelCurve> {
    Tracer {
        family,
        i: curve.pair.0,
        j: curve.pair.1,
        level: curve.level,
        params,
        window: family.window(),
    }
    .restrict(curve, margin)
}

/// Interface curves of a labeling and the corner candidates where they meet.
#[derive(Clone, Debug, Serialize)]
pub struct BoundaryGraph {
    pub curves: Vec<LevelCurve>,
    pub corners: Vec<C64>,
}

impl BoundaryGraph {
    /// JSON manifest: pairs (1-based), vertex counts, lengths, masses, closure flags and corners.
    pub fn manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "curves": self.curves.iter().map(|c| serde_json::json!({
                "pair": [c.pair.0 + 1, c.pair.1 + 1],
                "level": c.level,
                "vertices": c.len(),
                "length": c.length(),
                "mass": c.mass(),
                "closed": c.closed,
                "start": c.vertices.first(),
                "end": c.vertices.last(),
            })).collect::<Vec<_>>(),
            "corners": self.corners,
        })
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra] = rb;
        }
    }
}

struct LabelEdge {
    pair: (usize, usize),
    midpoint: C64,
    corners: [usize; 2],
}

fn label_edges(labeling: &RegionLabeling) -> Vec<LabelEdge> {
    let grid = labeling.grid();
    let vid = |ix: usize, iy: usize| iy * (grid.nx + 1) + ix;
    let mut edges = Vec::new();
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let a = labeling.label(grid.index(ix, iy)).resolved();
            if ix + 1 < grid.nx {
                let b = labeling.label(grid.index(ix + 1, iy)).resolved();
                if a != b {
                    edges.push(LabelEdge {
                        pair: (a.min(b), a.max(b)),
                        midpoint: (grid.center_of(ix, iy) + grid.center_of(ix + 1, iy)) * 0.5,
                        corners: [vid(ix + 1, iy), vid(ix + 1, iy + 1)],
                    });
                }
            }
            if iy + 1 < grid.ny {
                let b = labeling.label(grid.index(ix, iy + 1)).resolved();
                if a != b {
                    edges.push(LabelEdge {
                        pair: (a.min(b), a.max(b)),
                        midpoint: (grid.center_of(ix, iy) + grid.center_of(ix, iy + 1)) * 0.5,
                        corners: [vid(ix, iy + 1), vid(ix + 1, iy + 1)],
                    });
                }
            }
        }
    }
    edges
}

/// Local minima of `H_i - H_k` along an interface of pair `(i, j)` that come
/// within half a step of zero: places where a third piece touches the curve.
fn tangency_candidates(family: &AnalyticFamily, curve: &LevelCurve, step: f64) -> Vec<C64> {
    let (i, j) = curve.pair;
    let mut out = Vec::new();
    let n = curve.vertices.len();
    if n < 3 {
        return out;
    }
    for k in (0..family.len()).filter(|&k| k != i && k != j) {
        let q: Vec<f64> = curve
            .vertices
            .iter()
            .map(|&v| family.h(i, v) - family.h(k, v))
            .collect();
        for m in 1..n - 1 {
            if q[m] <= q[m - 1] && q[m] <= q[m + 1] {
                let v = curve.vertices[m];
                let slope = (family.a(i, v) - family.a(k, v)).norm();
                if q[m].abs() <= 0.5 * step * slope {
                    // vertex of the parabola through the three samples
                    let (s0, s1, s2) = (curve.arclength[m - 1], curve.arclength[m], curve.arclength[m + 1]);
                    let (d1, d2) = ((q[m] - q[m - 1]) / (s1 - s0), (q[m + 1] - q[m]) / (s2 - s1));
                    let curv = (d2 - d1) / (s2 - s0);
                    let s_min = if curv > 0.0 {
                        (0.5 * (s0 + s1) - d1 / (2.0 * curv)).clamp(s0, s2)
                    } else {
                        s1
                    };
                    let (a, b, t) = if s_min <= s1 {
                        (curve.vertices[m - 1], v, (s_min - s0) / (s1 - s0))
                    } else {
                        (v, curve.vertices[m + 1], (s_min - s1) / (s2 - s1))
                    };
                    out.push(a + (b - a) * t);
                }
            }
        }
    }
    out
}

/// Newton solve of `H_i = H_j = H_k` near `start` for some triple of `labels`,
/// accepted when all three are maximal there and the point stays within 32 cells.
fn triple_point(family: &AnalyticFamily, labels: &[usize], start: C64, h: f64, tol: f64) -> Option<C64> {
    let window = family.window();
    for (x, &i) in labels.iter().enumerate() {
        for (y, &j) in labels.iter().enumerate().skip(x + 1) {
            for &k in labels.iter().skip(y + 1) {
                let mut z = start;
                for _ in 0..60 {
                    let hk = family.h(k, z);
                    let f = [family.h(i, z) - hk, family.h(j, z) - hk];
                    if f[0].abs().max(f[1].abs()) <= tol {
                        let top = (0..family.len())
                            .map(|m| family.h(m, z))
                            .fold(f64::NEG_INFINITY, f64::max);
                        if top - hk <= tol && (z - start).norm() <= 32.0 * h && window.contains(z) {
                            return Some(z);
                        }
                        break;
                    }
                    // rows are the gradients conj(A_i - A_k), conj(A_j - A_k)
                    let (gi, gj) = (
                        (family.a(i, z) - family.a(k, z)).conj(),
                        (family.a(j, z) - family.a(k, z)).conj(),
                    );
                    let det = gi.re * gj.im - gi.im * gj.re;
                    if det.abs() <= f64::EPSILON * gi.norm() * gj.norm() {
                        break;
                    }
                    let dx = (-f[0] * gj.im + f[1] * gi.im) / det;
                    let dy = (-gi.re * f[1] + gj.re * f[0]) / det;
                    let mut step = C64::new(dx, dy);
                    if step.norm() > 4.0 * h {
                        step *= 4.0 * h / step.norm();
                    }
                    z += step;
                }
            }
        }
    }
    None
}

/// Traces every interface of a max-derived labeling.
///
/// Label changes between neighbouring cells are grouped by member pair and
/// connected component; each component not already covered is traced as a
/// full level curve of `H_i - H_j` and cut down to the runs where `i` and `j`
/// are the largest pieces. Corners are grid vertices touching three or more
/// labels refined onto a triple point, interior run ends, and points where
/// a third piece touches a curve.
pub fn boundary_graph(
    family: &AnalyticFamily,
    labeling: &RegionLabeling,
    params: TraceParams,
) -> Result<BoundaryGraph, CurveError> {
    let grid = *labeling.grid();
    let h = grid.h();
    let window = grid.rect();
    let edges = label_edges(labeling);

    let mut uf = UnionFind((0..edges.len()).collect());
    let mut by_vertex: HashMap<(usize, usize, usize), usize> = HashMap::new();
    for (e, edge) in edges.iter().enumerate() {
        for &v in &edge.corners {
            match by_vertex.get(&(edge.pair.0, edge.pair.1, v)) {
                Some(&other) => uf.union(e, other),
                None => {
                    by_vertex.insert((edge.pair.0, edge.pair.1, v), e);
                }
            }
        }
    }
    let mut components: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut root_index: HashMap<usize, usize> = HashMap::new();
    for e in 0..edges.len() {
        let r = uf.find(e);
        let slot = *root_index.entry(r).or_insert_with(|| {
            components.push((r, Vec::new()));
            components.len() - 1
        });
        components[slot].1.push(e);
    }

    let mut curves: Vec<LevelCurve> = Vec::new();
    let mut full_traces: Vec<LevelCurve> = Vec::new();
    let mut corners: Vec<C64> = Vec::new();
    for (_, members) in &components {
        let pair = edges[members[0]].pair;
        let seed = edges[members[members.len() / 2]].midpoint;
        let covered = full_traces
            .iter()
            .filter(|c| c.pair == pair)
            .any(|c| c.distance(seed) <= 2.0 * h);
        if covered {
            continue;
        }
        let tracer = Tracer {
            family,
            i: pair.0,
            j: pair.1,
            level: 0.0,
            params,
            window,
        };
        let full = tracer.trace(seed)?;
        let margin = |z: C64| {
            let top = family.h(pair.0, z).max(family.h(pair.1, z));
            (0..family.len())
                .filter(|&k| k != pair.0 && k != pair.1)
                .map(|k| top - family.h(k, z))
                .fold(f64::INFINITY, f64::min)
        };
        let pieces = tracer.restrict(&full, &margin);
        corners.extend(tangency_candidates(family, &full, params.step));
        for piece in &pieces {
            for end in [piece.vertices[0], *piece.vertices.last().unwrap()] {
                if window.clearance(end) > 1e-9 * h {
                    corners.push(end);
                }
            }
        }
        curves.extend(pieces);
        full_traces.push(full);
    }

    // grid vertices touching three or more labels, moved onto a nearby triple point
    for iy in 1..grid.ny {
        for ix in 1..grid.nx {
            let mut seen: Vec<usize> = [
                grid.index(ix - 1, iy - 1),
                grid.index(ix, iy - 1),
                grid.index(ix - 1, iy),
                grid.index(ix, iy),
            ]
            .iter()
            .map(|&c| labeling.label(c).resolved())
            .collect();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() >= 3 {
                let vertex = grid.origin + C64::new(ix as f64 * h, iy as f64 * h);
                if let Some(z) = triple_point(family, &seen, vertex, h, params.curve_tol) {
                    corners.push(z);
                }
            }
        }
    }
    let mut merged: Vec<C64> = Vec::new();
    for c in corners {
        if merged.iter().all(|m| (m - c).norm() > 2.0 * h) {
            merged.push(c);
        }
    }
    Ok(BoundaryGraph {
        curves,
        corners: merged,
    })
}

/// Rate of change of `Re(f_from - f_into)` where `path` first leaves the
/// `from` region for the `into` region.
///
/// The path is sampled at quarter-cell spacing; the escape parameter is the
/// last `from` sample before the first `into` sample, refined by bisection on
/// the labels. Returns `Re[(A_from - A_into)(gamma(tau)) gamma'(tau)]` with a
/// unit-speed tangent.
pub fn escape_monotonicity_check(
    family: &AnalyticFamily,
    labeling: &RegionLabeling,
    path: &[C64],
    from: usize,
    into: usize,
) -> Result<f64, CurveError> {
    family.member(from)?;
    family.member(into)?;
    if path.len() < 2 {
        return Err(CurveError::DegeneratePath);
    }
    let spacing = labeling.grid().h() / 4.0;
    let label = |z: C64| labeling.label_at(z).map(|l| l.region());
    let mut last_from: Option<(C64, usize)> = None;
    for (seg, w) in path.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let n = ((b - a).norm() / spacing).ceil().max(1.0) as usize;
        for k in 0..=n {
            let z = a + (b - a) * (k as f64 / n as f64);
            match label(z)? {
                Some(l) if l == from => last_from = Some((z, seg)),
                Some(l) if l == into => {
                    if let Some((zf, seg_f)) = last_from {
                        let (mut lo, mut hi) = (zf, z);
                        for _ in 0..40 {
                            let mid = (lo + hi) * 0.5;
                            if label(mid)? == Some(from) {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                        }
                        let tau = (lo + hi) * 0.5;
                        let dir = path[seg_f + 1] - path[seg_f];
                        let dir = if seg_f == seg { dir } else { hi - lo };
                        let tangent = dir / dir.norm();
                        return Ok(((family.a(from, tau) - family.a(into, tau)) * tangent).re);
                    }
                }
                _ => {}
            }
        }
    }
    Err(CurveError::NoEscape { from, into })
}

/// Cells of `labeling` carrying label `i`; used by callers checking that curves separate labels.
pub fn labels_near(labeling: &RegionLabeling, z: C64, radius: f64) -> Vec<usize> {
    let grid = labeling.grid();
    let h = grid.h();
    let reach = (radius / h).ceil() as isize + 1;
    let Some(idx) = grid.cell_of(z) else {
        return vec![];
    };
    let (cx, cy) = grid.coords(idx);
    let mut out = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let (x, y) = (cx as isize + dx, cy as isize + dy);
            if x < 0 || y < 0 || x >= grid.nx as isize || y >= grid.ny as isize {
                continue;
            }
            let c = grid.index(x as usize, y as usize);
            if (grid.center(c) - z).norm() <= radius {
                if let CellLabel::Region(l) = labeling.label(c) {
                    if !out.contains(&l) {
                        out.push(l);
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}
