//! Mollified derivatives on grids and the interface measure `dbar Phi`.
//!
//! Fields are sampled at cell centers, convolved with a discrete bump of
//! radius `epsilon` and differentiated by central differences. Because the
//! discrete convolution commutes with the difference stencils, a mollified
//! maximum of harmonic pieces keeps a nonnegative discrete Laplacian up to
//! rounding.

use std::io::{self, Write};
use std::ops::{Add, Mul};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::{AnalyticFamily, C64};
use crate::curves::{segment_distance, BoundaryGraph, LevelCurve};
use crate::error::MeasureError;
use crate::field::{CellLabel, GridWindow, PAField};

/// Relative tolerance on the real part of `dbar`, in units of the largest interface density.
pub const POSITIVITY_TOL: f64 = 1e-3;
/// Imaginary-part tolerance factor: `|Im dbar| <= IM_TOL_FACTOR * density * h / epsilon^2`.
pub const IM_TOL_FACTOR: f64 = 2.0;

/// Discrete radial bump `c (1 - |z|^2/epsilon^2)^4` on the lattice `h Z^2`, normalized to unit mass.
#[derive(Clone, Debug, PartialEq)]
pub struct Mollifier {
    radius: f64,
    h: f64,
    half_width: usize,
    /// Row-major `(2 m + 1)^2` weights summing to one.
    weights: Vec<f64>,
}

impl Mollifier {
    /// Bump of radius `radius` on a grid of spacing `h`; requires at least three cells per radius.
    pub fn new(radius: f64, h: f64) -> Result<Self, MeasureError> {
        if !(radius >= 3.0 * h * (1.0 - 1e-12)) || !(h > 0.0) {
            return Err(MeasureError::UnderResolved { radius, min: 3.0 * h });
        }
        let m = ((radius / h).ceil() as usize).saturating_sub(1).max(1);
        let side = 2 * m + 1;
        let mut weights = vec![0.0; side * side];
        for dy in 0..side {
            for dx in 0..side {
                let (x, y) = ((dx as f64 - m as f64) * h, (dy as f64 - m as f64) * h);
                let t2 = (x * x + y * y) / (radius * radius);
                if t2 < 1.0 {
                    weights[dy * side + dx] = (1.0 - t2).powi(4);
                }
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self {
            radius,
            h,
            half_width: m,
            weights,
        })
    }

    /// Radius given as a multiple of the grid spacing.
    pub fn cells(multiple: f64, grid: &GridWindow) -> Result<Self, MeasureError> {
        Self::new(multiple * grid.h(), grid.h())
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    /// Riemann sum of the continuous density: the weights divided by `h^2`, times `h^2`.
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Cells from the edge needed for values at least `epsilon + h` inside the window.
    pub fn margin(&self) -> usize {
        (self.radius / self.h + 0.5 - 1e-9).ceil() as usize
    }
}

/// Values sampled at the cell centers of a grid.
///
/// Cells closer than `margin` cells to the window edge carry no meaningful value.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSamples<T> {
    pub grid: GridWindow,
    pub values: Vec<T>,
    pub margin: usize,
    /// Largest interface density `|A_i - A_j| / 2` across the samples; sets verdict tolerances.
    pub density_scale: f64,
}

pub trait Sample: Copy + Default + Send + Sync + Add<Output = Self> + Mul<f64, Output = Self> {}
impl<T: Copy + Default + Send + Sync + Add<Output = T> + Mul<f64, Output = T>> Sample for T {}

impl<T: Sample> FieldSamples<T> {
    pub fn from_fn(grid: GridWindow, f: impl Fn(C64) -> T + Sync) -> Self {
        let values = (0..grid.len()).into_par_iter().map(|idx| f(grid.center(idx))).collect();
        Self {
            grid,
            values,
            margin: 0,
            density_scale: 0.0,
        }
    }

    pub fn with_density_scale(self, density_scale: f64) -> Self {
        Self { density_scale, ..self }
    }

    pub fn is_interior(&self, idx: usize) -> bool {
        self.grid.edge_distance(idx) >= self.margin
    }

    /// Indices of the cells with defined values.
    pub fn interior(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.grid.len()).filter(|&idx| self.is_interior(idx))
    }

    fn convolved(&self, mollifier: &Mollifier) -> Result<Vec<T>, MeasureError> {
        if (mollifier.h - self.grid.h()).abs() > 1e-12 * self.grid.h() {
            return Err(MeasureError::GridMismatch);
        }
        let grid = self.grid;
        let m = mollifier.half_width as isize;
        let side = 2 * mollifier.half_width + 1;
        let reach = self.margin + mollifier.half_width;
        Ok((0..grid.len())
            .into_par_iter()
            .map(|idx| {
                if grid.edge_distance(idx) < reach {
                    return T::default();
                }
                let (ix, iy) = grid.coords(idx);
                let mut acc = T::default();
                for dy in -m..=m {
                    let row = (iy as isize + dy) as usize * grid.nx;
                    let krow = (dy + m) as usize * side;
                    for dx in -m..=m {
                        let w = mollifier.weights[krow + (dx + m) as usize];
                        if w != 0.0 {
                            // kernel is even, so K(k) = K(-k)
                            acc = acc + self.values[row + (ix as isize + dx) as usize] * w;
                        }
                    }
                }
                acc
            })
            .collect())
    }

    fn derived<U: Sample>(
        &self,
        mollifier: &Mollifier,
        stencil: impl Fn(&[T], usize, usize) -> U + Sync,
    ) -> Result<FieldSamples<U>, MeasureError> {
        let conv = self.convolved(mollifier)?;
        let margin = self
            .margin
            .max(mollifier.margin())
            .max(self.margin + mollifier.half_width + 1);
        let grid = self.grid;
        let values = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                if grid.edge_distance(idx) < margin {
                    U::default()
                } else {
                    stencil(&conv, idx, grid.nx)
                }
            })
            .collect();
        Ok(FieldSamples {
            grid,
            values,
            margin,
            density_scale: self.density_scale,
        })
    }

    /// The mollified samples themselves.
    pub fn mollified(&self, mollifier: &Mollifier) -> Result<FieldSamples<T>, MeasureError> {
        self.derived(mollifier, |c, idx, _| c[idx])
    }
}

fn label_members(label: CellLabel) -> Vec<usize> {
    match label {
        CellLabel::Region(i) => vec![i],
        CellLabel::Tie(s) => s.iter().collect(),
    }
}

/// Largest `|A_i - A_j| / 2` over pairs of members meeting across neighbouring cells.
fn interface_density(field: &PAField) -> f64 {
    let grid = *field.grid();
    let family = field.family();
    let lab = field.labeling();
    (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let (ix, iy) = grid.coords(idx);
            let mut best: f64 = 0.0;
            let here = label_members(lab.label(idx));
            let mut check = |other: usize| {
                let mut set = here.clone();
                for j in label_members(lab.label(other)) {
                    if !set.contains(&j) {
                        set.push(j);
                    }
                }
                let z = (grid.center(idx) + grid.center(other)) * 0.5;
                for a in 0..set.len() {
                    for b in a + 1..set.len() {
                        best = best.max(measure_density(family, set[a], set[b], z));
                    }
                }
            };
            if ix + 1 < grid.nx {
                check(grid.index(ix + 1, iy));
            }
            if iy + 1 < grid.ny {
                check(grid.index(ix, iy + 1));
            }
            if here.len() > 1 {
                check(idx);
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

impl FieldSamples<C64> {
    /// `Phi` at the cell centers; tie cells take the mean of the tied pieces.
    pub fn from_field(field: &PAField) -> Self {
        let grid = *field.grid();
        let values = (0..grid.len())
            .into_par_iter()
            .map(|idx| field.cell_value(idx))
            .collect();
        Self {
            grid,
            values,
            margin: 0,
            density_scale: interface_density(field),
        }
    }

    /// Samples without labels: the density scale is half the largest jump between neighbours.
    pub fn from_values(grid: GridWindow, f: impl Fn(C64) -> C64 + Sync) -> Self {
        let s = Self::from_fn(grid, f);
        let mut jump: f64 = 0.0;
        for idx in 0..grid.len() {
            let (ix, iy) = grid.coords(idx);
            if ix + 1 < grid.nx {
                jump = jump.max((s.values[idx] - s.values[idx + 1]).norm());
            }
            if iy + 1 < grid.ny {
                jump = jump.max((s.values[idx] - s.values[idx + grid.nx]).norm());
            }
        }
        s.with_density_scale(jump / 2.0)
    }

    /// CSV with columns `x,y,re,im` over the interior cells.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x,y,re,im")?;
        for idx in self.interior() {
            let z = self.grid.center(idx);
            writeln!(out, "{},{},{},{}", z.re, z.im, self.values[idx].re, self.values[idx].im)?;
        }
        Ok(())
    }
}

impl FieldSamples<f64> {
    /// Potential `H_i` of the cell label at the centers.
    pub fn potential(field: &PAField) -> Self {
        let grid = *field.grid();
        let values = (0..grid.len())
            .into_par_iter()
            .map(|idx| field.cell_potential(idx))
            .collect();
        Self {
            grid,
            values,
            margin: 0,
            density_scale: interface_density(field),
        }
    }

    /// `max_i H_i` at the centers, with the density scale of the max-labeling.
    pub fn max_potential(family: &AnalyticFamily, grid: GridWindow) -> Result<Self, MeasureError> {
        let field = PAField::max_derived(family.clone(), grid, 0.0)?;
        let mut s = Self::potential(&field);
        s.values = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                family
                    .harmonics_at(grid.center(idx))
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        Ok(s)
    }

    /// CSV with columns `x,y,re,im`; `im` is zero.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x,y,re,im")?;
        for idx in self.interior() {
            let z = self.grid.center(idx);
            writeln!(out, "{},{},{},0", z.re, z.im, self.values[idx])?;
        }
        Ok(())
    }
}

/// Interface density `|A_i(z) - A_j(z)| / 2`.
pub fn measure_density(family: &AnalyticFamily, i: usize, j: usize, z: C64) -> f64 {
    (family.a(i, z) - family.a(j, z)).norm() / 2.0
}

/// `1/2 (d_x + i d_y)` of the mollified field, by central differences.
pub fn mollified_dbar(samples: &FieldSamples<C64>, mollifier: &Mollifier) -> Result<FieldSamples<C64>, MeasureError> {
    let h = samples.grid.h();
    samples.derived(mollifier, |c, idx, nx| {
        let dx = (c[idx + 1] - c[idx - 1]) / (2.0 * h);
        let dy = (c[idx + nx] - c[idx - nx]) / (2.0 * h);
        (dx + C64::i() * dy) * 0.5
    })
}

/// `(d_x - i d_y)` of the mollified potential: the field `Phi = 2 d_z phi`.
pub fn mollified_field(samples: &FieldSamples<f64>, mollifier: &Mollifier) -> Result<FieldSamples<C64>, MeasureError> {
    let h = samples.grid.h();
    samples.derived(mollifier, |c, idx, nx| {
        let dx = (c[idx + 1] - c[idx - 1]) / (2.0 * h);
        let dy = (c[idx + nx] - c[idx - nx]) / (2.0 * h);
        C64::new(dx, -dy)
    })
}

/// Five-point Laplacian of the mollified potential.
pub fn mollified_laplacian(
    samples: &FieldSamples<f64>,
    mollifier: &Mollifier,
) -> Result<FieldSamples<f64>, MeasureError> {
    let h2 = samples.grid.h() * samples.grid.h();
    samples.derived(mollifier, |c, idx, nx| {
        (c[idx + 1] + c[idx - 1] + c[idx + nx] + c[idx - nx] - 4.0 * c[idx]) / h2
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PositivityVerdict {
    pub verdict: bool,
    pub worst_cell: C64,
    /// `min(Re v, -|Im v|)` at the worst interior cell.
    pub worst_value: f64,
    pub tol_re: f64,
    pub tol_im: f64,
    pub max_density: f64,
    pub epsilon: f64,
    pub h: f64,
}

/// Whether `dbar` of the mollified field is a nonnegative real measure on the interior.
///
/// Real parts must stay above `-1e-3 * d` and imaginary parts within
/// `2 d h / epsilon^2`, where `d` is the largest interface density. The
/// imaginary bound covers the staircase error of a curve resolved only by
/// cell labels, which is of order `d h / epsilon^2`.
pub fn positivity_verdict(
    samples: &FieldSamples<C64>,
    mollifier: &Mollifier,
) -> Result<PositivityVerdict, MeasureError> {
    let dbar = mollified_dbar(samples, mollifier)?;
    Ok(positivity_of(&dbar, mollifier))
}

/// [`positivity_verdict`] on an already computed `dbar`.
pub fn positivity_of(dbar: &FieldSamples<C64>, mollifier: &Mollifier) -> PositivityVerdict {
    let d = dbar.density_scale;
    let (eps, h) = (mollifier.radius, dbar.grid.h());
    let tol_re = POSITIVITY_TOL * d;
    let tol_im = IM_TOL_FACTOR * d * h / (eps * eps);
    let mut verdict = true;
    let mut worst = (f64::INFINITY, C64::new(f64::NAN, f64::NAN));
    for idx in dbar.interior() {
        let v = dbar.values[idx];
        if v.re < -tol_re || v.im.abs() > tol_im || !v.re.is_finite() || !v.im.is_finite() {
            verdict = false;
        }
        let score = v.re.min(-v.im.abs());
        if score < worst.0 {
            worst = (score, dbar.grid.center(idx));
        }
    }
    PositivityVerdict {
        verdict,
        worst_cell: worst.1,
        worst_value: worst.0,
        tol_re,
        tol_im,
        max_density: d,
        epsilon: eps,
        h,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubharmonicVerdict {
    pub verdict: bool,
    pub min_value: f64,
    pub worst_cell: C64,
    pub tolerance: f64,
    pub epsilon: f64,
    pub h: f64,
}

/// Whether the mollified Laplacian stays above `-1e-3 * d` on the interior.
pub fn subharmonic_verdict(
    samples: &FieldSamples<f64>,
    mollifier: &Mollifier,
) -> Result<SubharmonicVerdict, MeasureError> {
    let lap = mollified_laplacian(samples, mollifier)?;
    let tolerance = POSITIVITY_TOL * lap.density_scale;
    let (min_value, worst_cell) = lap.interior().map(|idx| (lap.values[idx], lap.grid.center(idx))).fold(
        (f64::INFINITY, C64::new(f64::NAN, f64::NAN)),
        |a, b| if b.0 < a.0 { b } else { a },
    );
    Ok(SubharmonicVerdict {
        verdict: min_value >= -tolerance,
        min_value,
        worst_cell,
        tolerance,
        epsilon: mollifier.radius,
        h: lap.grid.h(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FluxCheck {
    pub measured: f64,
    pub predicted: f64,
    pub ratio: f64,
    pub band: f64,
    pub cells: usize,
}

/// Compares the mass of `Re dbar` in a tube around `curve` with `int density ds`.
///
/// The tube holds interior cells within `band` of the curve, cut off
/// perpendicular to the curve at both ends; cells straddling a cut count
/// with the fraction on the inner side. Mass leaving through the cuts is
/// balanced by mass entering when the curve continues beyond them.
pub fn flux_vs_density(
    samples: &FieldSamples<C64>,
    mollifier: &Mollifier,
    curve: &LevelCurve,
    band: f64,
) -> Result<FluxCheck, MeasureError> {
    check_band(samples.grid, mollifier, curve, band)?;
    let dbar = mollified_dbar(samples, mollifier)?;
    flux_from_dbar(&dbar, mollifier, curve, band)
}

fn check_band(grid: GridWindow, mollifier: &Mollifier, curve: &LevelCurve, band: f64) -> Result<(), MeasureError> {
    let min = mollifier.radius + 2.0 * grid.h();
    if !(band >= min * (1.0 - 1e-12)) {
        return Err(MeasureError::BandTooNarrow { band, min });
    }
    let need = band + mollifier.radius;
    let window = grid.rect();
    for &v in &curve.vertices {
        if window.clearance(v) < need * (1.0 - 1e-9) {
            return Err(MeasureError::CurveNearEdge {
                at: v,
                clearance: window.clearance(v),
                min: need,
            });
        }
    }
    Ok(())
}

/// [`flux_vs_density`] with a precomputed `dbar`.
pub fn flux_from_dbar(
    dbar: &FieldSamples<C64>,
    mollifier: &Mollifier,
    curve: &LevelCurve,
    band: f64,
) -> Result<FluxCheck, MeasureError> {
    check_band(dbar.grid, mollifier, curve, band)?;
    let grid = dbar.grid;
    let h = grid.h();
    let nseg = curve.segments().count();
    let total = curve.length();
    // nearest distance and arclength of the foot point per cell; end segments extend past their ends
    let mut best: Vec<(f64, f64)> = vec![(f64::INFINITY, 0.0); grid.len()];
    let mut s0 = 0.0;
    for (k, (a, b, _, _)) in curve.segments().enumerate() {
        let d = b - a;
        let len = d.norm();
        let lo = C64::new(a.re.min(b.re) - band, a.im.min(b.im) - band);
        let hi = C64::new(a.re.max(b.re) + band, a.im.max(b.im) + band);
        let ix0 = ((lo.re - grid.origin.re) / h).floor().max(0.0) as usize;
        let iy0 = ((lo.im - grid.origin.im) / h).floor().max(0.0) as usize;
        let ix1 = (((hi.re - grid.origin.re) / h).ceil().max(0.0) as usize).min(grid.nx);
        let iy1 = (((hi.im - grid.origin.im) / h).ceil().max(0.0) as usize).min(grid.ny);
        for iy in iy0..iy1 {
            for ix in ix0..ix1 {
                let idx = grid.index(ix, iy);
                let z = grid.center(idx);
                let (dist, t) = segment_distance(z, a, b);
                if dist < best[idx].0 {
                    let mut t_foot = t;
                    if !curve.closed {
                        let raw = ((z - a) * d.conj()).re / d.norm_sqr();
                        if (k == 0 && raw < 0.0) || (k + 1 == nseg && raw > 1.0) {
                            t_foot = raw;
                        }
                    }
                    best[idx] = (dist, s0 + t_foot * len);
                }
            }
        }
        s0 += len;
    }
    // fraction of a cell on the inner side of an end cut, by the cell's width along the tangent
    let end_weight = |s: f64, tangent: C64| {
        let width = h * (tangent.re.abs() + tangent.im.abs()) / tangent.norm();
        (0.5 + s / width).clamp(0.0, 1.0)
    };
    let n = curve.vertices.len();
    let (t_start, t_end) = (
        curve.vertices[1] - curve.vertices[0],
        curve.vertices[n - 1] - curve.vertices[n - 2],
    );
    let mut measured = 0.0;
    let mut cells = 0;
    for (idx, &(dist, s)) in best.iter().enumerate() {
        if dist > band || !dbar.is_interior(idx) {
            continue;
        }
        let weight = if curve.closed {
            1.0
        } else {
            end_weight(s, t_start) * end_weight(total - s, t_end)
        };
        if weight > 0.0 {
            measured += weight * dbar.values[idx].re * h * h;
            cells += 1;
        }
    }
    let predicted = curve.mass();
    Ok(FluxCheck {
        measured,
        predicted,
        ratio: measured / predicted,
        band,
        cells,
    })
}

/// Mass of `Re dbar` over interior cells within `radius` of `center`.
pub fn disk_flux(dbar: &FieldSamples<C64>, center: C64, radius: f64) -> f64 {
    let h = dbar.grid.h();
    dbar.interior()
        .filter(|&idx| (dbar.grid.center(idx) - center).norm() <= radius)
        .map(|idx| dbar.values[idx].re * h * h)
        .sum()
}

/// Flux around a corner in excess of the interface mass through the same disks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AtomBound {
    pub corner: C64,
    pub radii: Vec<f64>,
    pub excess: Vec<f64>,
}

/// Disk flux minus curve mass at each radius; a point mass at `corner` shows as a constant excess.
///
/// Radii should exceed the mollifier radius. The estimate is a bound, not a
/// decision: leakage through the disk edge is of order `density * epsilon`.
pub fn atom_bound(dbar: &FieldSamples<C64>, measure: &BoundaryMeasure, corner: C64, radii: &[f64]) -> AtomBound {
    let excess = radii
        .iter()
        .map(|&r| disk_flux(dbar, corner, r) - measure.mass_within(corner, r))
        .collect();
    AtomBound {
        corner,
        radii: radii.to_vec(),
        excess,
    }
}

/// Sum of interface densities along level curves.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryMeasure {
    pub curves: Vec<LevelCurve>,
    pub total_mass: f64,
}

impl BoundaryMeasure {
    pub fn new(curves: Vec<LevelCurve>) -> Self {
        let total_mass = curves.iter().map(LevelCurve::mass).sum();
        Self { curves, total_mass }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new())
    }

    pub fn from_graph(graph: &BoundaryGraph) -> Self {
        Self::new(graph.curves.clone())
    }

    /// Same support with every density multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(
            self.curves
                .iter()
                .map(|c| LevelCurve {
                    densities: c.densities.iter().map(|d| d * factor).collect(),
                    ..c.clone()
                })
                .collect(),
        )
    }

    /// Largest spacing between consecutive vertices.
    pub fn max_spacing(&self) -> f64 {
        self.curves.iter().map(LevelCurve::max_spacing).fold(0.0, f64::max)
    }

    /// Mass carried inside the disk `|z - center| <= radius`, with segments clipped exactly.
    pub fn mass_within(&self, center: C64, radius: f64) -> f64 {
        let mut total = 0.0;
        for (a, b, da, db) in self.curves.iter().flat_map(|c| c.segments()) {
            let d = b - a;
            let len = d.norm();
            if len == 0.0 {
                continue;
            }
            // |a - center + t d|^2 = radius^2
            let w = a - center;
            let (qa, qb, qc) = (
                d.norm_sqr(),
                2.0 * (w.re * d.re + w.im * d.im),
                w.norm_sqr() - radius * radius,
            );
            let disc = qb * qb - 4.0 * qa * qc;
            if disc <= 0.0 {
                continue;
            }
            let root = disc.sqrt();
            let t0 = ((-qb - root) / (2.0 * qa)).max(0.0);
            let t1 = ((-qb + root) / (2.0 * qa)).min(1.0);
            if t1 > t0 {
                total += len * (t1 - t0) * (da + (db - da) * (t0 + t1) / 2.0);
            }
        }
        total
    }

    /// Distance from `z` to the nearest vertex.
    pub fn vertex_distance(&self, z: C64) -> f64 {
        self.curves
            .iter()
            .flat_map(|c| c.vertices.iter())
            .map(|v| (z - v).norm())
            .fold(f64::INFINITY, f64::min)
    }
}

/// `(1/pi) int density(w) / (z - w) ds(w)` by the trapezoid rule on each polyline.
pub fn cauchy_transform(measure: &BoundaryMeasure, z: C64) -> Result<C64, MeasureError> {
    let min = 3.0 * measure.max_spacing();
    let distance = measure.vertex_distance(z);
    if distance < min {
        return Err(MeasureError::NearSingularity { at: z, distance, min });
    }
    let mut total = C64::new(0.0, 0.0);
    for curve in &measure.curves {
        for (a, b, da, db) in curve.segments() {
            total += (da / (z - a) + db / (z - b)) * ((b - a).norm() / 2.0);
        }
    }
    Ok(total / std::f64::consts::PI)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconstructionFit {
    /// Largest `|R(z) - P(z)|` over the test points.
    pub residual: f64,
    /// Largest `|Phi(z)|` over the test points.
    pub scale: f64,
    pub fit_degree: usize,
    pub points: usize,
}

/// Fits a polynomial of degree `fit_degree` to `R = Phi - C_nu` at `test_points` and reports the worst misfit.
///
/// A small residual says `Phi - C_nu` is analytic on the sampled region. The
/// fit runs in the centered, scaled variable `(z - c) / s` and is solved by SVD.
pub fn reconstruction_residual(
    field: &PAField,
    measure: &BoundaryMeasure,
    test_points: &[C64],
    fit_degree: usize,
) -> Result<ReconstructionFit, MeasureError> {
    let unknowns = fit_degree + 1;
    if test_points.len() < unknowns {
        return Err(MeasureError::Underdetermined {
            points: test_points.len(),
            unknowns,
        });
    }
    let mut phi = Vec::with_capacity(test_points.len());
    let mut rhs = Vec::with_capacity(test_points.len());
    for &z in test_points {
        let p = field.value(z)?;
        phi.push(p);
        rhs.push(p - cauchy_transform(measure, z)?);
    }
    let center = test_points.iter().sum::<C64>() / test_points.len() as f64;
    let spread = test_points
        .iter()
        .map(|z| (z - center).norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let m = test_points.len();
    let a = DMatrix::<C64>::from_fn(m, unknowns, |r, c| ((test_points[r] - center) / spread).powu(c as u32));
    let b = DVector::<C64>::from_vec(rhs.clone());
    let svd = a.clone().svd(true, true);
    let coeffs = svd.solve(&b, 1e-14).map_err(|e| MeasureError::Solve(e.to_string()))?;
    let fitted = &a * &coeffs;
    let residual = (0..m).map(|r| (fitted[r] - rhs[r]).norm()).fold(0.0, f64::max);
    let scale = phi.iter().map(|p| p.norm()).fold(0.0, f64::max);
    Ok(ReconstructionFit {
        residual,
        scale,
        fit_degree,
        points: m,
    })
}

/// `count` uniform points in the disk `|z - center| < radius` accepted by `keep`, reproducible from `seed`.
pub fn sample_test_points(seed: u64, center: C64, radius: f64, count: usize, keep: impl Fn(C64) -> bool) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count && attempts < 1000 * count.max(1) {
        attempts += 1;
        let z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if z.norm_sqr() >= 1.0 {
            continue;
        }
        let z = center + z * radius;
        if keep(z) {
            out.push(z);
        }
    }
    out
}

/// `sum |a - b| h^2` over cells interior to both samples and at least `margin` cells from the edge.
pub fn l1_distance(a: &FieldSamples<C64>, b: &FieldSamples<C64>, margin: usize) -> Result<f64, MeasureError> {
    if a.grid != b.grid {
        return Err(MeasureError::GridMismatch);
    }
    let h = a.grid.h();
    let m = margin.max(a.margin).max(b.margin);
    Ok((0..a.grid.len())
        .filter(|&idx| a.grid.edge_distance(idx) >= m)
        .map(|idx| (a.values[idx] - b.values[idx]).norm() * h * h)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::Rect;
    use crate::curves::{boundary_graph, trace_level_curve, TraceParams};
    use crate::field::{classify_grid, counterexample_labeling, half_plane_labeling};
    use crate::presets;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn unit() -> Rect {
        Rect::square(c(0.0, 0.0), 1.0)
    }

    #[test]
    fn mollifier_mass_and_resolution() {
        let grid = GridWindow::over(unit(), 64).unwrap();
        for k in [3.0, 4.5, 6.0, 12.0] {
            let m = Mollifier::cells(k, &grid).unwrap();
            assert!((m.mass() - 1.0).abs() < 1e-8);
            assert!(m.weights.iter().all(|&w| w >= 0.0));
            assert!(m.half_width() as f64 * grid.h() < m.radius());
        }
        assert!(matches!(
            Mollifier::cells(2.5, &grid),
            Err(MeasureError::UnderResolved { .. })
        ));
    }

    #[test]
    fn density_examples() {
        let fam = presets::diagonal_pair(unit()).unwrap();
        assert!((measure_density(&fam, 0, 1, c(0.3, -0.2)) - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(measure_density(&fam, 1, 1, c(0.3, -0.2)), 0.0);
        let cusp = presets::cusp_triple(unit()).unwrap();
        assert_eq!(measure_density(&cusp, 1, 2, c(0.0, 0.0)), 2.5);
    }

    #[test]
    fn dbar_of_constant_and_conjugate() {
        let grid = GridWindow::over(unit(), 64).unwrap();
        let m = Mollifier::cells(6.0, &grid).unwrap();
        let k = FieldSamples::from_values(grid, |_| c(2.0, -1.0));
        let d = mollified_dbar(&k, &m).unwrap();
        assert!(d.interior().all(|idx| d.values[idx].norm() <= 1e-12));
        let conj = FieldSamples::from_values(grid, |z| z.conj());
        let d = mollified_dbar(&conj, &m).unwrap();
        assert!(d.interior().count() > 0);
        for idx in d.interior() {
            assert!((d.values[idx] - 1.0).norm() <= 1e-3, "{}", d.values[idx]);
            assert!(d.grid.rect().clearance(d.grid.center(idx)) >= m.radius() + grid.h());
        }
    }

    proptest! {
        #[test]
        fn mollifier_reproduces_affine(a in -3.0..3.0f64, b in -3.0..3.0f64, k in -3.0..3.0f64, mult in 3.0..9.0f64) {
            let grid = GridWindow::over(unit(), 48).unwrap();
            let m = Mollifier::cells(mult, &grid).unwrap();
            let s = FieldSamples::from_fn(grid, |z: C64| a * z.re + b * z.im + k);
            let conv = s.mollified(&m).unwrap();
            let scale = a.abs() + b.abs() + k.abs();
            for idx in conv.interior() {
                prop_assert!((conv.values[idx] - s.values[idx]).abs() <= 1e-8 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn diagonal_pair_positivity_depends_on_labeling() {
        let fam = presets::diagonal_pair(unit()).unwrap();
        let grid = GridWindow::over(unit(), 128).unwrap();
        let m = Mollifier::cells(6.0, &grid).unwrap();
        let valid = PAField::max_derived(fam.clone(), grid, 0.0).unwrap();
        let v = positivity_verdict(&FieldSamples::from_field(&valid), &m).unwrap();
        assert!(v.verdict, "{v:?}");
        assert!((v.max_density - 0.5f64.sqrt()).abs() < 1e-12);
        let n = c(1.0, -1.0) / 2f64.sqrt();
        let mut passes = 0;
        for sign in [1.0, -1.0] {
            let lab = half_plane_labeling(grid, 2, c(0.0, 0.0), n * sign, 0, 1);
            let f = PAField::new(fam.clone(), lab).unwrap();
            let v = positivity_verdict(&FieldSamples::from_field(&f), &m).unwrap();
            assert!(!v.verdict);
            assert!(v.worst_value < -0.1);
            // the worst cell lies along x = y
            assert!(
                (v.worst_cell.re - v.worst_cell.im).abs() <= m.radius() + grid.h(),
                "{:?}",
                v.worst_cell
            );
            passes += v.verdict as usize;
        }
        assert_eq!(passes, 0);
    }

    #[test]
    fn laplacian_examples() {
        let grid = GridWindow::over(unit(), 96).unwrap();
        let m = Mollifier::cells(6.0, &grid).unwrap();
        let cusp = presets::cusp_triple(unit()).unwrap();
        let single = FieldSamples::from_fn(grid, |z: C64| cusp.h(1, z));
        let lap = mollified_laplacian(&single, &m).unwrap();
        let max = lap.interior().map(|i| lap.values[i].abs()).fold(0.0, f64::max);
        assert!(max <= 1e-6 * 5.0, "{max}");

        let fam = presets::diagonal_pair(unit()).unwrap();
        let phi = FieldSamples::max_potential(&fam, grid).unwrap();
        let lap = mollified_laplacian(&phi, &m).unwrap();
        let tol = 1e-3 * phi.density_scale;
        let mut near = 0.0;
        let mut total = 0.0;
        for idx in lap.interior() {
            let v = lap.values[idx];
            assert!(v >= -tol);
            let z = grid.center(idx);
            total += v;
            if (z.re + z.im).abs() / 2f64.sqrt() <= m.radius() + 2.0 * grid.h() {
                near += v;
            }
        }
        assert!(near >= 0.999 * total);

        let v = subharmonic_verdict(&FieldSamples::max_potential(&cusp, grid).unwrap(), &m).unwrap();
        assert!(v.verdict, "{v:?}");
        let swap = PAField::new(cusp.clone(), counterexample_labeling(grid).unwrap()).unwrap();
        let v = subharmonic_verdict(&FieldSamples::potential(&swap), &m).unwrap();
        assert!(v.verdict, "{v:?}");
    }

    #[test]
    fn laplacian_support_clusters_on_graph() {
        let cusp = presets::cusp_triple(unit()).unwrap();
        let grid = GridWindow::over(unit(), 128).unwrap();
        let m = Mollifier::cells(6.0, &grid).unwrap();
        let lab = classify_grid(&cusp, grid, 0.0).unwrap();
        let graph = boundary_graph(&cusp, &lab, TraceParams::for_grid(&cusp, &grid)).unwrap();
        let phi = FieldSamples::max_potential(&cusp, grid).unwrap();
        let lap = mollified_laplacian(&phi, &m).unwrap();
        let threshold = 1e-2 * phi.density_scale;
        for idx in lap.interior() {
            if lap.values[idx] > threshold {
                let z = grid.center(idx);
                let d = graph.curves.iter().map(|c| c.distance(z)).fold(f64::INFINITY, f64::min);
                assert!(d <= m.radius() + 2.0 * grid.h(), "{z}: {d}");
            }
        }
    }

    #[test]
    fn flux_on_antidiagonal() {
        let fam = presets::diagonal_pair(unit()).unwrap();
        let grid = GridWindow::over(unit(), 128).unwrap();
        let m = Mollifier::cells(6.0, &grid).unwrap();
        let field = PAField::max_derived(fam.clone(), grid, 0.0).unwrap();
        let params = TraceParams::for_grid(&fam, &grid);
        let window = Rect::square(c(0.0, 0.0), 0.5);
        let curve = trace_level_curve(&fam, 0, 1, c(0.0, 0.0), 0.0, params, window).unwrap();
        let band = m.radius() + 2.0 * grid.h();
        let check = flux_vs_density(&FieldSamples::from_field(&field), &m, &curve, band).unwrap();
        assert!((check.predicted - 1.0).abs() < 1e-9);
        assert!((check.ratio - 1.0).abs() <= 0.02, "{check:?}");
        assert!(matches!(
            flux_vs_density(&FieldSamples::from_field(&field), &m, &curve, m.radius()),
            Err(MeasureError::BandTooNarrow { .. })
        ));
    }

    #[test]
    fn flux_of_constant_field_is_zero() {
        let fam = presets::diagonal_pair(unit()).unwrap();
        let grid = GridWindow::over(unit(), 64).unwrap();
        let m = Mollifier::cells(6.0, &grid).unwrap();
        let samples = FieldSamples::from_values(grid, |_| c(1.0, 0.0));
        let params = TraceParams::for_grid(&fam, &grid);
        let curve = trace_level_curve(&fam, 0, 1, c(0.0, 0.0), 0.0, params, Rect::square(c(0.0, 0.0), 0.4)).unwrap();
        let zero = LevelCurve {
            densities: vec![0.0; curve.len()],
            ..curve
        };
        let check = flux_vs_density(&samples, &m, &zero, m.radius() + 2.0 * grid.h()).unwrap();
        assert!(check.measured.abs() < 1e-12 && check.predicted == 0.0);
    }

    #[test]
    fn atom_bound_sees_point_masses() {
        let grid = GridWindow::over(unit(), 64).unwrap();
        let h = grid.h();
        let at = grid.cell_of(c(0.1, 0.1)).unwrap();
        let corner = grid.center(at);
        let dbar = FieldSamples::from_fn(grid, |z| {
            if z == corner {
                c(0.3 / (h * h), 0.0)
            } else {
                c(0.0, 0.0)
            }
        });
        let bound = atom_bound(&dbar, &BoundaryMeasure::empty(), corner, &[0.1, 0.2]);
        assert!(bound.excess.iter().all(|e| (e - 0.3).abs() < 1e-12), "{bound:?}");

        let measure = real_segment(1000, 0.5);
        assert!((measure.mass_within(c(0.0, 0.3), 0.5) - 0.5 * 0.8).abs() < 1e-12);
        assert!((measure.mass_within(c(0.9, 0.0), 0.5) - 0.5 * 0.6).abs() < 1e-12);
        assert_eq!(measure.mass_within(c(0.0, 1.0), 0.5), 0.0);
    }

    fn real_segment(panels: usize, density: f64) -> BoundaryMeasure {
        let fam = presets::step_pair(Rect::square(c(0.0, 0.0), 2.0)).unwrap();
        let vertices: Vec<C64> = (0..=panels)
            .map(|k| c(-1.0 + 2.0 * k as f64 / panels as f64, 0.0))
            .collect();
        let mut curve = LevelCurve::from_vertices(&fam, (0, 1), 0.0, vertices, false);
        curve.densities = vec![density; panels + 1];
        BoundaryMeasure::new(vec![curve])
    }

    #[test]
    fn cauchy_of_segment_matches_logarithm() {
        let measure = real_segment(10_000, 0.5);
        let z = c(0.0, 2.0);
        let exact = ((z + 1.0) / (z - 1.0)).ln() / (2.0 * std::f64::consts::PI);
        let got = cauchy_transform(&measure, z).unwrap();
        assert!((got - exact).norm() <= 1e-6, "{got} vs {exact}");
        assert_eq!(cauchy_transform(&BoundaryMeasure::empty(), z).unwrap(), c(0.0, 0.0));
        assert!(matches!(
            cauchy_transform(&measure, c(0.0, 1e-5)),
            Err(MeasureError::NearSingularity { .. })
        ));
    }

    /// Adaptive Simpson on `t -> density / (z - w(t))` along a straight segment.
    fn adaptive(f: &dyn Fn(f64) -> C64, a: f64, b: f64, tol: f64) -> C64 {
        fn simpson(f: &dyn Fn(f64) -> C64, a: f64, b: f64) -> C64 {
            (f(a) + f((a + b) / 2.0) * 4.0 + f(b)) * ((b - a) / 6.0)
        }
        fn rec(f: &dyn Fn(f64) -> C64, a: f64, b: f64, whole: C64, tol: f64, depth: u32) -> C64 {
            let m = (a + b) / 2.0;
            let (l, r) = (simpson(f, a, m), simpson(f, m, b));
            if depth == 0 || (l + r - whole).norm() <= 15.0 * tol {
                l + r + (l + r - whole) / 15.0
            } else {
                rec(f, a, m, l, tol / 2.0, depth - 1) + rec(f, m, b, r, tol / 2.0, depth - 1)
            }
        }
        rec(f, a, b, simpson(f, a, b), tol, 40)
    }

    #[test]
    fn cauchy_of_clipped_antidiagonal() {
        let fam = presets::diagonal_pair(unit()).unwrap();
        let grid = GridWindow::over(unit(), 64).unwrap();
        let params = TraceParams::for_grid(&fam, &grid).with_step(5e-4);
        let curve = trace_level_curve(&fam, 0, 1, c(0.0, 0.0), 0.0, params, Rect::square(c(0.0, 0.0), 0.5)).unwrap();
        let measure = BoundaryMeasure::new(vec![curve]);
        let z = c(1.0, 0.0);
        let rho = 0.5f64.sqrt();
        let f = |s: f64| {
            let w = c(0.5, -0.5) + c(-1.0, 1.0) * (s / 2f64.sqrt());
            C64::new(rho, 0.0) / (z - w)
        };
        let oracle = adaptive(&f, 0.0, 2f64.sqrt(), 1e-12) / std::f64::consts::PI;
        let got = cauchy_transform(&measure, z).unwrap();
        assert!((got - oracle).norm() <= 1e-6, "{got} vs {oracle}");
    }

    #[test]
    fn reconstruction_of_single_region() {
        let cusp = presets::cusp_triple(unit()).unwrap();
        let grid = GridWindow::over(unit(), 32).unwrap();
        let lab = crate::field::RegionLabeling::from_fn(grid, 3, |_| CellLabel::Region(1));
        let field = PAField::new(cusp, lab).unwrap();
        let pts = sample_test_points(1, c(0.0, 0.0), 0.8, 50, |_| true);
        let fit = reconstruction_residual(&field, &BoundaryMeasure::empty(), &pts, 4).unwrap();
        assert!(fit.residual <= 1e-9 * fit.scale, "{fit:?}");
        assert!(matches!(
            reconstruction_residual(&field, &BoundaryMeasure::empty(), &pts[..3], 4),
            Err(MeasureError::Underdetermined { points: 3, unknowns: 5 })
        ));
    }

    #[test]
    fn reconstruction_of_diagonal_pair() {
        let window = Rect::square(c(0.0, 0.0), 2.0);
        let fam = presets::diagonal_pair(window).unwrap();
        let grid = GridWindow::over(window, 128).unwrap();
        let field = PAField::max_derived(fam.clone(), grid, 0.0).unwrap();
        let params = TraceParams::for_grid(&fam, &grid).with_step(2e-3);
        let curve = trace_level_curve(&fam, 0, 1, c(0.0, 0.0), 0.0, params, window).unwrap();
        let measure = BoundaryMeasure::new(vec![curve]);
        let pts = sample_test_points(7, c(0.0, 0.0), 0.5, 200, |z| (z.re + z.im).abs() / 2f64.sqrt() >= 0.05);
        assert_eq!(pts.len(), 200);
        let good = reconstruction_residual(&field, &measure, &pts, 4).unwrap();
        assert!(good.residual <= 1e-3 * good.scale, "{good:?}");
        let bad = reconstruction_residual(&field, &measure.scaled(2.0), &pts, 4).unwrap();
        assert!(
            bad.residual >= 10.0 * good.residual,
            "{} vs {}",
            bad.residual,
            good.residual
        );
    }

    #[test]
    fn mollified_field_approaches_pa_field() {
        let cusp = presets::cusp_triple(unit()).unwrap();
        let grid = GridWindow::over(unit(), 128).unwrap();
        let field = PAField::max_derived(cusp.clone(), grid, 0.0).unwrap();
        let exact = FieldSamples::from_field(&field);
        let phi = FieldSamples::max_potential(&cusp, grid).unwrap();
        let margin = Mollifier::cells(12.0, &grid).unwrap().margin() + 1;
        let mut last = f64::INFINITY;
        for k in [12.0, 8.0, 4.0] {
            let m = Mollifier::cells(k, &grid).unwrap();
            let d = l1_distance(&mollified_field(&phi, &m).unwrap(), &exact, margin).unwrap();
            assert!(d < last, "{k}: {d} vs {last}");
            last = d;
        }
    }

    #[test]
    fn csv_columns() {
        let grid = GridWindow::over(unit(), 16).unwrap();
        let s = FieldSamples::from_values(grid, |z| z);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("x,y,re,im"));
        assert_eq!(text.lines().count(), 257);
    }
}
