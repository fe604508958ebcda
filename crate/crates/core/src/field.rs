//! Max-fields, grid labelings of the regions `M_i` and piecewise-analytic fields.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::{AnalyticFamily, Rect, C64};
use crate::error::FieldError;
use crate::presets;

/// Uniform grid of square cells covering a rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridWindow {
    /// Lower-left corner.
    pub origin: C64,
    pub width: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridWindow {
    pub fn new(origin: C64, width: f64, height: f64, nx: usize, ny: usize) -> Result<Self, FieldError> {
        if nx < 8 || ny < 8 {
            return Err(FieldError::GridTooCoarse { nx, ny });
        }
        let dx = width / nx as f64;
        let dy = height / ny as f64;
        if !(dx > 0.0) || !dx.is_finite() || (dx - dy).abs() > 1e-12 * dx {
            return Err(FieldError::NonSquareCells { dx, dy });
        }
        Ok(Self {
            origin,
            width,
            height,
            nx,
            ny,
        })
    }

    /// Grid over `rect` with `nx` columns; the row count follows from square cells.
    pub fn over(rect: Rect, nx: usize) -> Result<Self, FieldError> {
        let h = rect.width() / nx as f64;
        let ny = (rect.height() / h).round() as usize;
        Self::new(rect.min, rect.width(), rect.height(), nx, ny)
    }

    pub fn h(&self) -> f64 {
        self.width / self.nx as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rect(&self) -> Rect {
        Rect::new(self.origin, self.origin + C64::new(self.width, self.height))
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    #[inline]
    pub fn center_of(&self, ix: usize, iy: usize) -> C64 {
        let h = self.h();
        self.origin + C64::new((ix as f64 + 0.5) * h, (iy as f64 + 0.5) * h)
    }

    #[inline]
    pub fn center(&self, idx: usize) -> C64 {
        let (ix, iy) = self.coords(idx);
        self.center_of(ix, iy)
    }

    /// Cell containing `z`; points on the upper/right edge belong to the last cell.
    pub fn cell_of(&self, z: C64) -> Option<usize> {
        let h = self.h();
        let fx = (z.re - self.origin.re) / h;
        let fy = (z.im - self.origin.im) / h;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= self.nx as f64 && fy <= self.ny as f64) {
            return None;
        }
        let ix = (fx.floor() as usize).min(self.nx - 1);
        let iy = (fy.floor() as usize).min(self.ny - 1);
        Some(self.index(ix, iy))
    }

    /// Distance in cells from `idx` to the nearest grid edge (0 for edge cells).
    pub fn edge_distance(&self, idx: usize) -> usize {
        let (ix, iy) = self.coords(idx);
        ix.min(iy).min(self.nx - 1 - ix).min(self.ny - 1 - iy)
    }

    /// Same window with the resolution doubled.
    pub fn refined(&self) -> Self {
        Self {
            nx: self.nx * 2,
            ny: self.ny * 2,
            ..*self
        }
    }
}

/// Set of tied member indices, stored as a bit mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TieSet(pub u64);

impl TieSet {
    pub fn from_indices(indices: &[usize]) -> Self {
        Self(indices.iter().fold(0u64, |m, &i| m | (1 << i)))
    }

    pub fn contains(&self, i: usize) -> bool {
        i < 64 && self.0 & (1 << i) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn first(&self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..64).filter(move |&i| self.contains(i))
    }
}

/// Label of one grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellLabel {
    Region(usize),
    Tie(TieSet),
}

impl CellLabel {
    /// Region index, resolving ties to the smallest tied member.
    pub fn resolved(&self) -> usize {
        match *self {
            CellLabel::Region(i) => i,
            CellLabel::Tie(s) => s.first().unwrap_or(0),
        }
    }

    pub fn region(&self) -> Option<usize> {
        match *self {
            CellLabel::Region(i) => Some(i),
            CellLabel::Tie(_) => None,
        }
    }

    /// Share of the cell attributed to member `i`: ties split evenly.
    pub fn weight(&self, i: usize) -> f64 {
        match *self {
            CellLabel::Region(j) => (i == j) as u8 as f64,
            CellLabel::Tie(s) if s.contains(i) => 1.0 / s.len() as f64,
            CellLabel::Tie(_) => 0.0,
        }
    }
}

/// Value and maximizers of `max_i H_i` at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxValue {
    pub value: f64,
    pub argmax: Vec<usize>,
}

fn argmax_within(values: &[f64], allowed: impl Fn(usize) -> bool, tol: f64) -> (f64, Vec<usize>) {
    let value = values
        .iter()
        .enumerate()
        .filter(|(i, _)| allowed(*i))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let argmax = values
        .iter()
        .enumerate()
        .filter(|(i, v)| allowed(*i) && **v >= value - tol)
        .map(|(i, _)| i)
        .collect();
    (value, argmax)
}

/// `max_i H_i(z)` and the exact set of maximizers.
pub fn max_field(family: &AnalyticFamily, z: C64) -> MaxValue {
    let (value, argmax) = argmax_within(&family.harmonics_at(z), |_| true, 0.0);
    MaxValue { value, argmax }
}

fn label_from(argmax: Vec<usize>) -> CellLabel {
    if argmax.len() == 1 {
        CellLabel::Region(argmax[0])
    } else {
        CellLabel::Tie(TieSet::from_indices(&argmax))
    }
}

/// Labeling of grid cells by member index.
#[derive(Clone, Debug)]
pub struct RegionLabeling {
    grid: GridWindow,
    members: usize,
    labels: Vec<CellLabel>,
    tie_tolerance: f64,
}

impl RegionLabeling {
    /// Labels each cell by `f(center)`.
    pub fn from_fn(grid: GridWindow, members: usize, f: impl Fn(C64) -> CellLabel + Sync) -> Self {
        let labels = (0..grid.len()).into_par_iter().map(|idx| f(grid.center(idx))).collect();
        Self {
            grid,
            members,
            labels,
            tie_tolerance: 0.0,
        }
    }

    pub fn grid(&self) -> &GridWindow {
        &self.grid
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn tie_tolerance(&self) -> f64 {
        self.tie_tolerance
    }

    pub fn labels(&self) -> &[CellLabel] {
        &self.labels
    }

    pub fn label(&self, idx: usize) -> CellLabel {
        self.labels[idx]
    }

    pub fn label_at(&self, z: C64) -> Result<CellLabel, FieldError> {
        self.grid
            .cell_of(z)
            .map(|idx| self.labels[idx])
            .ok_or(FieldError::OutsideGrid(z))
    }

    pub fn tie_count(&self) -> usize {
        self.labels.iter().filter(|l| matches!(l, CellLabel::Tie(_))).count()
    }

    pub fn count(&self, i: usize) -> usize {
        self.labels.iter().filter(|l| **l == CellLabel::Region(i)).count()
    }

    /// Fraction of cells whose labels differ.
    pub fn difference_fraction(&self, other: &RegionLabeling) -> Result<f64, FieldError> {
        if self.grid != other.grid {
            return Err(FieldError::GridMismatch);
        }
        let n = self.labels.iter().zip(&other.labels).filter(|(a, b)| a != b).count();
        Ok(n as f64 / self.labels.len() as f64)
    }

    /// Members labeling some cell whose center is within `radius` of `z`.
    ///
    /// This is the grid estimate of the index set of members whose regions
    /// accumulate at `z`.
    pub fn active_near(&self, z: C64, radius: f64) -> Vec<usize> {
        let mut set = 0u64;
        for (idx, l) in self.labels.iter().enumerate() {
            if (self.grid.center(idx) - z).norm() <= radius {
                match *l {
                    CellLabel::Region(i) => set |= 1 << i,
                    CellLabel::Tie(s) => set |= s.0,
                }
            }
        }
        TieSet(set).iter().collect()
    }

    /// CSV with columns `x,y,label`; labels are 1-based and ties are written as 0.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x,y,label")?;
        for (idx, l) in self.labels.iter().enumerate() {
            let c = self.grid.center(idx);
            let label = match l {
                CellLabel::Region(i) => i + 1,
                CellLabel::Tie(_) => 0,
            };
            writeln!(out, "{},{},{}", c.re, c.im, label)?;
        }
        Ok(())
    }
}

/// Labels every cell by the maximizer of `H_i` at its center.
///
/// Cells with two or more members within `tie_tolerance` of the maximum are ties.
pub fn classify_grid(
    family: &AnalyticFamily,
    grid: GridWindow,
    tie_tolerance: f64,
) -> Result<RegionLabeling, FieldError> {
    if !(tie_tolerance >= 0.0) {
        return Err(FieldError::NegativeTolerance(tie_tolerance));
    }
    let mut labeling = RegionLabeling::from_fn(grid, family.len(), |z| {
        label_from(argmax_within(&family.harmonics_at(z), |_| true, tie_tolerance).1)
    });
    labeling.tie_tolerance = tie_tolerance;
    Ok(labeling)
}

/// Two-region labeling split by the line through `through` with unit normal `normal`.
///
/// Cells on the side `normal` points into get `inside`, the rest `outside`;
/// centers exactly on the line are ties.
pub fn half_plane_labeling(
    grid: GridWindow,
    members: usize,
    through: C64,
    normal: C64,
    inside: usize,
    outside: usize,
) -> RegionLabeling {
    RegionLabeling::from_fn(grid, members, |z| {
        let s = ((z - through) * normal.conj()).re;
        if s > 0.0 {
            CellLabel::Region(inside)
        } else if s < 0.0 {
            CellLabel::Region(outside)
        } else {
            CellLabel::Tie(TieSet::from_indices(&[inside, outside]))
        }
    })
}

/// Max-labeling with member `removed` excluded on the open upper half-plane above the base point.
///
/// In the lower half-plane the cell takes the full maximizer; above the base
/// point it takes the maximizer among the remaining members. For the cusp
/// triple `{0, 4 + 2z, -1}` with `removed = 0` this replaces the two upper
/// cusp sectors of the zero piece by `H_3` (left of `5x + x^2 = y^2`) and
/// `H_2` (right of it), giving a continuous subharmonic function that is not
/// the maximum of the three.
pub fn sector_swap_labeling(
    family: &AnalyticFamily,
    grid: GridWindow,
    tie_tolerance: f64,
    removed: usize,
) -> Result<RegionLabeling, FieldError> {
    family.member(removed)?;
    if !(tie_tolerance >= 0.0) {
        return Err(FieldError::NegativeTolerance(tie_tolerance));
    }
    let p = family.base_point();
    let mut labeling = RegionLabeling::from_fn(grid, family.len(), |z| {
        let h = family.harmonics_at(z);
        let upper = z.im > p.im;
        label_from(argmax_within(&h, |i| !upper || i != removed, tie_tolerance).1)
    });
    labeling.tie_tolerance = tie_tolerance;
    Ok(labeling)
}

/// The non-maximal labeling of the cusp triple on `grid`.
pub fn counterexample_labeling(grid: GridWindow) -> Result<RegionLabeling, FieldError> {
    let family = presets::cusp_triple(grid.rect())?;
    sector_swap_labeling(&family, grid, 0.0, 0)
}

/// A piecewise-analytic field `sum_i A_i chi_i` given by a family and a labeling.
#[derive(Clone, Debug)]
pub struct PAField {
    family: AnalyticFamily,
    labeling: RegionLabeling,
}

impl PAField {
    pub fn new(family: AnalyticFamily, labeling: RegionLabeling) -> Result<Self, FieldError> {
        if labeling.members() != family.len() {
            return Err(FieldError::GridMismatch);
        }
        Ok(Self { family, labeling })
    }

    /// Field of the max-labeling; its values are `2 d/dz` of the max-potential.
    pub fn max_derived(family: AnalyticFamily, grid: GridWindow, tie_tolerance: f64) -> Result<Self, FieldError> {
        let labeling = classify_grid(&family, grid, tie_tolerance)?;
        Ok(Self { family, labeling })
    }

    pub fn family(&self) -> &AnalyticFamily {
        &self.family
    }

    pub fn labeling(&self) -> &RegionLabeling {
        &self.labeling
    }

    pub fn grid(&self) -> &GridWindow {
        self.labeling.grid()
    }

    /// `A_i(z)` for the label `i` of the cell containing `z`.
    pub fn value(&self, z: C64) -> Result<C64, FieldError> {
        let idx = self.grid().cell_of(z).ok_or(FieldError::OutsideGrid(z))?;
        match self.labeling.label(idx) {
            CellLabel::Region(i) => Ok(self.family.a(i, z)),
            CellLabel::Tie(_) => {
                let (ix, iy) = self.grid().coords(idx);
                Err(FieldError::AmbiguousCell { ix, iy })
            }
        }
    }

    /// Field value at the center of cell `idx`; ties take the mean of the tied pieces.
    pub fn cell_value(&self, idx: usize) -> C64 {
        let z = self.grid().center(idx);
        match self.labeling.label(idx) {
            CellLabel::Region(i) => self.family.a(i, z),
            CellLabel::Tie(s) => s.iter().map(|i| self.family.a(i, z)).sum::<C64>() / s.len() as f64,
        }
    }

    /// Potential `H_i` of the cell label at the center of cell `idx`; ties take the largest.
    pub fn cell_potential(&self, idx: usize) -> f64 {
        let z = self.grid().center(idx);
        match self.labeling.label(idx) {
            CellLabel::Region(i) => self.family.h(i, z),
            CellLabel::Tie(s) => s.iter().map(|i| self.family.h(i, z)).fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Free-function form of [`PAField::value`].
pub fn pa_field(field: &PAField, z: C64) -> Result<C64, FieldError> {
    field.value(z)
}

/// CSV with columns `x,y,phi` of the max-potential at cell centers.
pub fn write_max_field_csv<W: Write>(family: &AnalyticFamily, grid: &GridWindow, mut out: W) -> io::Result<()> {
    writeln!(out, "x,y,phi")?;
    for idx in 0..grid.len() {
        let z = grid.center(idx);
        writeln!(out, "{},{},{}", z.re, z.im, max_field(family, z).value)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::ComplexPolynomial;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn unit() -> Rect {
        Rect::square(c(0.0, 0.0), 1.0)
    }

    #[test]
    fn max_field_examples() {
        let fam = presets::cusp_triple(unit()).unwrap();
        let m = max_field(&fam, c(0.5, 0.0));
        assert_eq!(m.value, 2.25);
        assert_eq!(m.argmax, vec![1]);
        assert_eq!(fam.harmonics_at(c(0.5, 0.0)), vec![0.0, 2.25, -0.5]);

        let m = max_field(&fam, c(0.0, 0.0));
        assert_eq!(m.value, 0.0);
        assert_eq!(m.argmax, vec![0, 1, 2]);

        let z = c(0.05, 0.5);
        let h = fam.harmonics_at(z);
        assert!((h[1] + 0.0475).abs() < 1e-15 && (h[2] + 0.05).abs() < 1e-15);
        let m = max_field(&fam, z);
        assert_eq!(m.value, 0.0);
        assert_eq!(m.argmax, vec![0]);
    }

    #[test]
    fn grid_validation() {
        assert!(matches!(
            GridWindow::new(c(0.0, 0.0), 1.0, 1.0, 4, 8),
            Err(FieldError::GridTooCoarse { .. })
        ));
        assert!(matches!(
            GridWindow::new(c(0.0, 0.0), 1.0, 2.0, 8, 8),
            Err(FieldError::NonSquareCells { .. })
        ));
        let g = GridWindow::over(Rect::new(c(-1.0, 0.0), c(1.0, 0.5)), 32).unwrap();
        assert_eq!((g.nx, g.ny), (32, 8));
        assert_eq!(g.cell_of(c(1.0, 0.5)), Some(g.len() - 1));
        assert_eq!(g.cell_of(c(1.1, 0.5)), None);
    }

    #[test]
    fn diagonal_pair_splits_along_antidiagonal() {
        let fam = presets::diagonal_pair(unit()).unwrap();
        let grid = GridWindow::over(unit(), 64).unwrap();
        let lab = classify_grid(&fam, grid, 0.0).unwrap();
        for idx in 0..grid.len() {
            let z = grid.center(idx);
            let expected = if z.re + z.im > 0.0 {
                CellLabel::Region(0)
            } else if z.re + z.im < 0.0 {
                CellLabel::Region(1)
            } else {
                CellLabel::Tie(TieSet::from_indices(&[0, 1]))
            };
            assert_eq!(lab.label(idx), expected, "cell {idx} at {z}");
        }
    }

    #[test]
    fn unit_shift_gives_vertical_split() {
        let p = c(0.2, -0.1);
        let a1 = ComplexPolynomial::from_pairs(&[(0.5, 0.3), (1.0, -1.0)]);
        let a2 = ComplexPolynomial::from_pairs(&[(1.5, 0.3), (1.0, -1.0)]);
        let fam = AnalyticFamily::new(vec![a1, a2], p, unit()).unwrap();
        let grid = GridWindow::over(unit(), 40).unwrap();
        let lab = classify_grid(&fam, grid, 0.0).unwrap();
        for idx in 0..grid.len() {
            let z = grid.center(idx);
            if (z.re - p.re).abs() < 1e-9 {
                continue;
            }
            let expected = if z.re > p.re { 1 } else { 0 };
            assert_eq!(lab.label(idx), CellLabel::Region(expected), "{z}");
        }
    }

    #[test]
    fn zero_tolerance_has_no_ties_off_lattice() {
        let fam = presets::diagonal_pair(unit()).unwrap();
        let grid = GridWindow::new(c(-0.9731, -1.0113), 1.9, 1.9, 57, 57).unwrap();
        assert_eq!(classify_grid(&fam, grid, 0.0).unwrap().tie_count(), 0);
        assert!(classify_grid(&fam, grid, -1.0).is_err());
    }

    #[test]
    fn pa_field_examples() {
        let grid = GridWindow::over(unit(), 64).unwrap();
        let diag = PAField::max_derived(presets::diagonal_pair(unit()).unwrap(), grid, 0.0).unwrap();
        assert_eq!(pa_field(&diag, c(0.5, 0.0)).unwrap(), c(1.0, 0.0));
        assert_eq!(pa_field(&diag, c(-0.3, -0.3)).unwrap(), c(0.0, 1.0));
        let tie = grid.center_of(31, 32);
        assert!(matches!(pa_field(&diag, tie), Err(FieldError::AmbiguousCell { .. })));
        assert!(matches!(pa_field(&diag, c(3.0, 0.0)), Err(FieldError::OutsideGrid(_))));

        let cusp = PAField::max_derived(presets::cusp_triple(unit()).unwrap(), grid, 0.0).unwrap();
        assert_eq!(pa_field(&cusp, c(0.5, 0.0)).unwrap(), c(5.0, 0.0));
    }

    #[test]
    fn counterexample_examples() {
        let grid = GridWindow::over(unit(), 256).unwrap();
        let fam = presets::cusp_triple(unit()).unwrap();
        let max = classify_grid(&fam, grid, 0.0).unwrap();
        let swap = counterexample_labeling(grid).unwrap();
        let z = c(0.05, 0.5);
        assert_eq!(max.label_at(z).unwrap(), CellLabel::Region(0));
        // right of 5x + x^2 = y^2 the upper sector takes H_2
        let expected = if 5.0 * 0.05 + 0.05f64.powi(2) > 0.25 { 1 } else { 2 };
        assert_eq!(swap.label_at(z).unwrap(), CellLabel::Region(expected));
        assert_eq!(max.label_at(c(0.5, 0.0)).unwrap(), CellLabel::Region(1));
        assert_eq!(swap.label_at(c(0.5, 0.0)).unwrap(), CellLabel::Region(1));
        // lower cusp keeps the zero piece
        assert_eq!(swap.label_at(c(0.05, -0.5)).unwrap(), CellLabel::Region(0));
        let frac = swap.difference_fraction(&max).unwrap();
        assert!(frac > 0.0);
        // regression baseline for the 256^2 grid on [-1,1]^2
        assert_eq!((frac * grid.len() as f64).round() as usize, 1320);
    }

    #[test]
    fn counterexample_takes_a_family_value_everywhere() {
        let grid = GridWindow::over(unit(), 128).unwrap();
        let fam = presets::cusp_triple(unit()).unwrap();
        let swap = counterexample_labeling(grid).unwrap();
        let field = PAField::new(fam.clone(), swap).unwrap();
        for idx in 0..grid.len() {
            if let CellLabel::Region(_) = field.labeling().label(idx) {
                let v = field.cell_potential(idx);
                let h = fam.harmonics_at(grid.center(idx));
                assert!(h.contains(&v));
                // the swapped potential is max(H_2, H_3) above the axis and max of all below
                let z = grid.center(idx);
                let expected = if z.im > 0.0 {
                    h[1].max(h[2])
                } else {
                    h[0].max(h[1]).max(h[2])
                };
                assert_eq!(v, expected);
            }
        }
    }

    #[test]
    fn max_potential_is_continuous_across_edges() {
        for fam in [
            presets::cusp_triple(unit()).unwrap(),
            presets::diagonal_pair(unit()).unwrap(),
        ] {
            let grid = GridWindow::over(unit(), 96).unwrap();
            let h = grid.h();
            let lab = classify_grid(&fam, grid, 0.0).unwrap();
            let bound = fam.max_difference_bound() * h;
            for iy in 0..grid.ny {
                for ix in 0..grid.nx - 1 {
                    let (a, b) = (lab.label(grid.index(ix, iy)), lab.label(grid.index(ix + 1, iy)));
                    if let (CellLabel::Region(i), CellLabel::Region(j)) = (a, b) {
                        if i != j {
                            let m = (grid.center_of(ix, iy) + grid.center_of(ix + 1, iy)) * 0.5;
                            assert!((fam.h(i, m) - fam.h(j, m)).abs() <= bound);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn max_dominates_members_and_is_permutation_invariant() {
        let fam = presets::cusp_triple(unit()).unwrap();
        let perm = [2, 0, 1];
        let permuted = fam.permuted(&perm).unwrap();
        let grid = GridWindow::over(unit(), 48).unwrap();
        let a = classify_grid(&fam, grid, 0.0).unwrap();
        let b = classify_grid(&permuted, grid, 0.0).unwrap();
        for idx in 0..grid.len() {
            let z = grid.center(idx);
            let m = max_field(&fam, z);
            for i in 0..3 {
                assert!(m.value >= fam.h(i, z));
            }
            assert_eq!(m.value, max_field(&permuted, z).value);
            if let (CellLabel::Region(i), CellLabel::Region(k)) = (a.label(idx), b.label(idx)) {
                assert_eq!(perm[k], i);
            }
        }
    }

    #[test]
    fn csv_export_has_one_row_per_cell() {
        let fam = presets::diagonal_pair(unit()).unwrap();
        let grid = GridWindow::over(unit(), 8).unwrap();
        let lab = classify_grid(&fam, grid, 0.0).unwrap();
        let mut buf = Vec::new();
        lab.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 65);
        assert_eq!(text.lines().next(), Some("x,y,label"));
        let mut buf = Vec::new();
        write_max_field_csv(&fam, &grid, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 65);
    }

    #[test]
    fn active_near_origin() {
        let fam = presets::cusp_triple(unit()).unwrap();
        let grid = GridWindow::over(unit(), 256).unwrap();
        let lab = classify_grid(&fam, grid, 0.0).unwrap();
        assert_eq!(lab.active_near(c(0.0, 0.0), 0.2), vec![0, 1, 2]);
        assert_eq!(lab.active_near(c(0.7, 0.0), 0.05), vec![1]);
    }
}
