//! Descent-reachable sets on the cell graph and the smoothed-indicator monotonicity check.
//!
//! A move between 8-neighbour cell centers is admissible when every
//! `H_i - H_baseline` is non-increasing along it, tested by the sign of the
//! directional derivative `Re[(A_i - A_baseline) d]` at both ends and the midpoint.

use std::collections::VecDeque;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::analytic::{AnalyticFamily, C64};
use crate::error::ReachError;
use crate::field::{CellLabel, GridWindow, PAField};
use crate::measure::{FieldSamples, Mollifier};

/// Allowed increments of the smoothed indicator along a descent path.
pub const MONOTONICITY_SLACK: f64 = 1e-3;

const NEIGHBOURS: [(isize, isize); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

#[derive(Clone, Debug, PartialEq)]
pub struct ReachSet {
    pub grid: GridWindow,
    pub reachable: Vec<bool>,
    pub source: C64,
    pub source_cell: usize,
}

impl ReachSet {
    pub fn contains(&self, idx: usize) -> bool {
        self.reachable[idx]
    }

    pub fn count(&self) -> usize {
        self.reachable.iter().filter(|&&r| r).count()
    }

    /// CSV mask with columns `x,y,reachable`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x,y,reachable")?;
        for (idx, &r) in self.reachable.iter().enumerate() {
            let z = self.grid.center(idx);
            writeln!(out, "{},{},{}", z.re, z.im, r as u8)?;
        }
        Ok(())
    }
}

fn slack(family: &AnalyticFamily, grid: &GridWindow) -> f64 {
    1e-12 * family.gradient_bound().max(1.0) * grid.h()
}

/// First member `i != baseline` whose `H_i - H_baseline` increases along `a -> b`, if any.
fn ascending_member(family: &AnalyticFamily, baseline: usize, a: C64, b: C64, slack: f64) -> Option<usize> {
    let d = b - a;
    let mid = (a + b) * 0.5;
    (0..family.len()).filter(|&i| i != baseline).find(|&i| {
        [a, mid, b]
            .iter()
            .any(|&q| ((family.a(i, q) - family.a(baseline, q)) * d).re > slack)
    })
}

fn neighbour(grid: &GridWindow, idx: usize, (dx, dy): (isize, isize)) -> Option<usize> {
    let (ix, iy) = grid.coords(idx);
    let (x, y) = (ix as isize + dx, iy as isize + dy);
    (x >= 0 && y >= 0 && (x as usize) < grid.nx && (y as usize) < grid.ny).then(|| grid.index(x as usize, y as usize))
}

/// Cells reachable from the cell containing `z` by admissible 8-neighbour moves.
pub fn descent_reachable(
    family: &AnalyticFamily,
    z: C64,
    grid: GridWindow,
    baseline: usize,
) -> Result<ReachSet, ReachError> {
    family.member(baseline).map_err(crate::error::FieldError::from)?;
    let source_cell = grid.cell_of(z).ok_or(crate::error::FieldError::OutsideGrid(z))?;
    let slack = slack(family, &grid);
    let mut reachable = vec![false; grid.len()];
    reachable[source_cell] = true;
    let mut queue = VecDeque::from([source_cell]);
    while let Some(c) = queue.pop_front() {
        let a = grid.center(c);
        for step in NEIGHBOURS {
            let Some(n) = neighbour(&grid, c, step) else { continue };
            if reachable[n] {
                continue;
            }
            if ascending_member(family, baseline, a, grid.center(n), slack).is_none() {
                reachable[n] = true;
                queue.push_back(n);
            }
        }
    }
    Ok(ReachSet {
        grid,
        reachable,
        source: z,
        source_cell,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageReport {
    pub p: C64,
    /// Smallest 1-based index from which every later source reaches the whole target.
    pub n0: Option<usize>,
    /// Whether the target was covered from each source.
    pub covered: Vec<bool>,
    /// A target cell center missed by the last source, when coverage fails.
    pub uncovered: Option<C64>,
    pub target_cells: usize,
}

/// Checks that the reach sets of the sources in `sequence` eventually contain every `target` cell.
///
/// Target cells must lie where every `H_i - H_baseline` is negative. Only
/// the given sequence is examined.
pub fn limit_coverage_test(
    family: &AnalyticFamily,
    p: C64,
    target: &[usize],
    sequence: &[C64],
    grid: GridWindow,
    baseline: usize,
) -> Result<CoverageReport, ReachError> {
    if target.is_empty() {
        return Err(ReachError::EmptyTarget);
    }
    for &cell in target {
        let at = grid.center(cell);
        let outside = (0..family.len())
            .filter(|&i| i != baseline)
            .any(|i| !(family.h(i, at) - family.h(baseline, at) < 0.0));
        if outside {
            return Err(ReachError::TargetOutsideDescentRegion { cell, at });
        }
    }
    let mut covered = Vec::with_capacity(sequence.len());
    let mut uncovered = None;
    for &z in sequence {
        let reach = descent_reachable(family, z, grid, baseline)?;
        let miss = target.iter().find(|&&c| !reach.contains(c));
        covered.push(miss.is_none());
        uncovered = miss.map(|&c| grid.center(c));
    }
    let tail = covered.iter().rev().take_while(|&&c| c).count();
    let n0 = (tail > 0).then(|| covered.len() - tail + 1);
    Ok(CoverageReport {
        p,
        n0,
        covered,
        uncovered,
        target_cells: target.len(),
    })
}

/// The baseline indicator `chi_baseline` convolved with the mollifier; ties count fractionally.
pub fn smoothed_indicator(
    field: &PAField,
    baseline: usize,
    mollifier: &Mollifier,
) -> Result<FieldSamples<f64>, ReachError> {
    let lab = field.labeling();
    let grid = *field.grid();
    let mut indicator = FieldSamples::from_fn(grid, |_| 0.0);
    for (idx, v) in indicator.values.iter_mut().enumerate() {
        *v = match lab.label(idx) {
            CellLabel::Region(i) => (i == baseline) as u8 as f64,
            tie @ CellLabel::Tie(_) => tie.weight(baseline),
        };
    }
    Ok(indicator.mollified(mollifier)?)
}

/// Bilinear interpolation of cell-center samples.
fn interpolate(samples: &FieldSamples<f64>, z: C64) -> f64 {
    let g = samples.grid;
    let h = g.h();
    let fx = ((z.re - g.origin.re) / h - 0.5).clamp(0.0, (g.nx - 1) as f64);
    let fy = ((z.im - g.origin.im) / h - 0.5).clamp(0.0, (g.ny - 1) as f64);
    let (x0, y0) = ((fx.floor() as usize).min(g.nx - 2), (fy.floor() as usize).min(g.ny - 2));
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let v = |x: usize, y: usize| samples.values[g.index(x, y)];
    (1.0 - ty) * ((1.0 - tx) * v(x0, y0) + tx * v(x0 + 1, y0))
        + ty * ((1.0 - tx) * v(x0, y0 + 1) + tx * v(x0 + 1, y0 + 1))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotonicityCheck {
    pub holds: bool,
    /// Smallest increment between consecutive path vertices.
    pub worst_violation: f64,
    pub values: Vec<f64>,
}

/// Validates a descent path and its clearance from the window edge.
fn check_path(
    family: &AnalyticFamily,
    grid: &GridWindow,
    baseline: usize,
    margin: usize,
    path: &[C64],
) -> Result<(), ReachError> {
    if path.len() < 2 {
        return Err(ReachError::DegeneratePath);
    }
    let slack = slack(family, grid);
    for (segment, w) in path.windows(2).enumerate() {
        if let Some(member) = ascending_member(family, baseline, w[0], w[1], slack) {
            return Err(ReachError::NotDescending { segment, member });
        }
    }
    for (vertex, &z) in path.iter().enumerate() {
        match grid.cell_of(z) {
            Some(c) if grid.edge_distance(c) > margin => {}
            _ => return Err(ReachError::InsufficientClearance { vertex }),
        }
    }
    Ok(())
}

/// Whether the smoothed baseline indicator is non-decreasing along a descent path.
pub fn convolution_monotonicity_check(
    field: &PAField,
    baseline: usize,
    mollifier: &Mollifier,
    path: &[C64],
) -> Result<MonotonicityCheck, ReachError> {
    check_path(field.family(), field.grid(), baseline, mollifier.margin(), path)?;
    let smoothed = smoothed_indicator(field, baseline, mollifier)?;
    monotonicity_along(field.family(), &smoothed, baseline, path)
}

/// [`convolution_monotonicity_check`] with a precomputed smoothed indicator.
pub fn monotonicity_along(
    family: &AnalyticFamily,
    smoothed: &FieldSamples<f64>,
    baseline: usize,
    path: &[C64],
) -> Result<MonotonicityCheck, ReachError> {
    check_path(family, &smoothed.grid, baseline, smoothed.margin, path)?;
    let values: Vec<f64> = path.iter().map(|&z| interpolate(smoothed, z)).collect();
    let worst_violation = values.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    Ok(MonotonicityCheck {
        holds: worst_violation >= -MONOTONICITY_SLACK,
        worst_violation,
        values,
    })
}

/// Random walk of at most `steps` admissible moves from `start`, staying `margin` cells inside the grid.
pub fn random_descent_path<R: Rng>(
    family: &AnalyticFamily,
    grid: &GridWindow,
    baseline: usize,
    start: usize,
    steps: usize,
    margin: usize,
    rng: &mut R,
) -> Vec<C64> {
    let slack = slack(family, grid);
    let mut cell = start;
    let mut path = vec![grid.center(start)];
    for _ in 0..steps {
        let a = grid.center(cell);
        let mut moves: Vec<usize> = NEIGHBOURS
            .iter()
            .filter_map(|&s| neighbour(grid, cell, s))
            .filter(|&n| grid.edge_distance(n) >= margin)
            .filter(|&n| ascending_member(family, baseline, a, grid.center(n), slack).is_none())
            .collect();
        moves.shuffle(rng);
        let Some(&next) = moves.first() else { break };
        cell = next;
        path.push(grid.center(cell));
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::Rect;
    use crate::field::half_plane_labeling;
    use crate::presets;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn unit() -> Rect {
        Rect::square(c(0.0, 0.0), 1.0)
    }

    #[test]
    fn half_plane_anchoring() {
        let fam = presets::step_pair(unit()).unwrap();
        let grid = GridWindow::over(unit(), 64).unwrap();
        for z in [c(0.13, 0.4), c(-0.7, -0.2), c(0.99, 0.99)] {
            let r = descent_reachable(&fam, z, grid, 0).unwrap();
            let x0 = grid.center(r.source_cell).re;
            for idx in 0..grid.len() {
                assert_eq!(r.contains(idx), grid.center(idx).re <= x0, "{idx}");
            }
        }
    }

    #[test]
    fn corner_source_is_stuck() {
        // both differences grow towards the interior from the lower-left corner
        let fam = AnalyticFamily::constants(&[c(0.0, 0.0), c(1.0, 0.0), c(0.0, -1.0)], c(0.0, 0.0), unit()).unwrap();
        let grid = GridWindow::over(unit(), 16).unwrap();
        let r = descent_reachable(&fam, c(-0.99, -0.99), grid, 0).unwrap();
        assert_eq!(r.count(), 1);
        assert!(r.contains(r.source_cell));
    }

    #[test]
    fn quarter_plane_against_path_oracle() {
        let fam = presets::quarter_triple(unit()).unwrap();
        let grid = GridWindow::over(unit(), 64).unwrap();
        let z = c(0.5, -0.5);
        let r = descent_reachable(&fam, z, grid, 0).unwrap();
        let s = grid.center(r.source_cell);
        for idx in 0..grid.len() {
            let w = grid.center(idx);
            // monotone staircase path exists iff both coordinates move the right way
            let oracle = w.re <= s.re && w.im >= s.im;
            assert_eq!(r.contains(idx), oracle, "{w}");
        }
    }

    #[test]
    fn transitivity() {
        let fam = presets::cusp_triple(unit()).unwrap();
        let grid = GridWindow::over(unit(), 48).unwrap();
        let r = descent_reachable(&fam, c(0.3, 0.2), grid, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cells: Vec<usize> = (0..grid.len()).filter(|&i| r.contains(i)).collect();
        for _ in 0..10 {
            let w = grid.center(*cells.choose(&mut rng).unwrap());
            let rw = descent_reachable(&fam, w, grid, 0).unwrap();
            assert!((0..grid.len()).all(|i| !rw.contains(i) || r.contains(i)));
        }
    }

    #[test]
    fn refinement_keeps_reach() {
        let fam = presets::cusp_triple(unit()).unwrap();
        let coarse = GridWindow::over(unit(), 32).unwrap();
        let fine = coarse.refined();
        let z = c(0.31, 0.17);
        let rc = descent_reachable(&fam, z, coarse, 0).unwrap();
        let rf = descent_reachable(&fam, z, fine, 0).unwrap();
        for idx in 0..coarse.len() {
            if !rc.contains(idx) {
                continue;
            }
            // skip cells within one cell of the coarse boundary
            let interior = NEIGHBOURS
                .iter()
                .filter_map(|&s| neighbour(&coarse, idx, s))
                .all(|n| rc.contains(n));
            if !interior {
                continue;
            }
            let (ix, iy) = coarse.coords(idx);
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                assert!(rf.contains(fine.index(2 * ix + dx, 2 * iy + dy)));
            }
        }
    }

    #[test]
    fn coverage_of_quarter_plane() {
        let fam = presets::quarter_triple(unit()).unwrap();
        let grid = GridWindow::over(unit(), 64).unwrap();
        let target: Vec<usize> = (0..grid.len())
            .filter(|&i| {
                let w = grid.center(i);
                (-0.6..=-0.2).contains(&w.re) && (0.2..=0.6).contains(&w.im)
            })
            .collect();
        let seq: Vec<C64> = (1..=20).map(|n| c(0.5, -0.5) / n as f64).collect();
        let report = limit_coverage_test(&fam, c(0.0, 0.0), &target, &seq, grid, 0).unwrap();
        assert_eq!(report.n0, Some(1));
        assert!(report.uncovered.is_none());
        assert_eq!(
            limit_coverage_test(&fam, c(0.0, 0.0), &[], &seq, grid, 0),
            Err(ReachError::EmptyTarget)
        );
        let bad = grid.cell_of(c(0.5, 0.5)).unwrap();
        assert!(matches!(
            limit_coverage_test(&fam, c(0.0, 0.0), &[bad], &seq, grid, 0),
            Err(ReachError::TargetOutsideDescentRegion { .. })
        ));
    }

    #[test]
    fn coverage_failure_reports_cell() {
        let fam = presets::quarter_triple(unit()).unwrap();
        let grid = GridWindow::over(unit(), 32).unwrap();
        let target = vec![grid.cell_of(c(-0.5, 0.5)).unwrap()];
        // sources left of the target cannot move right
        let seq: Vec<C64> = (1..=5).map(|n| c(-0.9, -0.5 / n as f64)).collect();
        let report = limit_coverage_test(&fam, c(0.0, 0.0), &target, &seq, grid, 0).unwrap();
        assert_eq!(report.n0, None);
        assert!(report.uncovered.is_some());
    }

    #[test]
    fn monotonicity_examples() {
        let fam = presets::diagonal_pair(unit()).unwrap();
        let grid = GridWindow::over(unit(), 128).unwrap();
        let m = Mollifier::cells(6.0, &grid).unwrap();
        let valid = PAField::max_derived(fam.clone(), grid, 0.0).unwrap();
        let h = grid.h();
        let start = grid.center(grid.cell_of(c(-0.3, -0.3)).unwrap());
        let path: Vec<C64> = (0..60).map(|k| start + c(1.0, 1.0) * (k as f64 * h)).collect();
        let check = convolution_monotonicity_check(&valid, 0, &m, &path).unwrap();
        assert!(check.holds, "{check:?}");
        assert!(check.values[0] < 0.01 && *check.values.last().unwrap() > 0.99);

        let inside = grid.center(grid.cell_of(c(0.5, 0.3)).unwrap());
        let path: Vec<C64> = (0..20).map(|k| inside + c(1.0, 0.0) * (k as f64 * h)).collect();
        let check = convolution_monotonicity_check(&valid, 0, &m, &path).unwrap();
        assert!(check.holds);
        assert!(check.values.iter().all(|v| (v - 1.0).abs() < 1e-12));

        // M_1 on the lower-right side of x = y; moving up crosses into M_2
        let n = c(1.0, -1.0) / 2f64.sqrt();
        let wrong = PAField::new(fam.clone(), half_plane_labeling(grid, 2, c(0.0, 0.0), n, 0, 1)).unwrap();
        let start = grid.center(grid.cell_of(c(0.2, -0.2)).unwrap());
        let path: Vec<C64> = (0..60).map(|k| start + c(0.0, 1.0) * (k as f64 * h)).collect();
        let check = convolution_monotonicity_check(&wrong, 0, &m, &path).unwrap();
        assert!(!check.holds);
        assert!(check.worst_violation < -0.01);

        let up_left: Vec<C64> = vec![start, start + c(-h, 0.0)];
        assert!(matches!(
            convolution_monotonicity_check(&valid, 0, &m, &up_left),
            Err(ReachError::NotDescending { segment: 0, member: 1 })
        ));
        let edge = grid.center(grid.cell_of(c(0.99, 0.0)).unwrap());
        assert!(matches!(
            convolution_monotonicity_check(&valid, 0, &m, &[edge - h, edge]),
            Err(ReachError::InsufficientClearance { .. })
        ));
    }

    #[test]
    fn random_paths_are_admissible() {
        let fam = presets::cusp_triple(unit()).unwrap();
        let grid = GridWindow::over(unit(), 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let start = grid.cell_of(c(0.1, 0.1)).unwrap();
        let path = random_descent_path(&fam, &grid, 0, start, 40, 8, &mut rng);
        assert!(path.len() > 1);
        assert!(check_path(&fam, &grid, 0, 7, &path).is_ok());
    }

    #[test]
    fn csv_mask() {
        let fam = presets::step_pair(unit()).unwrap();
        let grid = GridWindow::over(unit(), 8).unwrap();
        let r = descent_reachable(&fam, c(0.0, 0.0), grid, 0).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 65);
        assert_eq!(text.lines().filter(|l| l.ends_with(",1")).count(), r.count());
    }
}
