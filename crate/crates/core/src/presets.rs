//! Small families used throughout the tests and bundled scenarios.

use crate::analytic::{AnalyticFamily, ComplexPolynomial, Rect, C64};
use crate::error::FamilyError;

const ORIGIN: C64 = C64::new(0.0, 0.0);

/// `A_1 = 1`, `A_2 = i` at the origin: `phi = max(x, -y)`, interface `x + y = 0`.
pub fn diagonal_pair(window: Rect) -> Result<AnalyticFamily, FamilyError> {
    AnalyticFamily::constants(&[C64::new(1.0, 0.0), C64::new(0.0, 1.0)], ORIGIN, window)
}

/// `A_1 = 0`, `A_2 = 4 + 2z`, `A_3 = -1` at the origin.
///
/// The harmonic parts are `0`, `4x + x^2 - y^2` and `-x`; all three
/// pairwise level curves through the origin are tangent there.
pub fn cusp_triple(window: Rect) -> Result<AnalyticFamily, FamilyError> {
    AnalyticFamily::new(
        vec![
            ComplexPolynomial::zero(),
            ComplexPolynomial::from_pairs(&[(4.0, 0.0), (2.0, 0.0)]),
            ComplexPolynomial::constant(C64::new(-1.0, 0.0)),
        ],
        ORIGIN,
        window,
    )
}

/// `A_1 = 0`, `A_2 = 1`: `phi = max(0, x)`, interface the imaginary axis.
pub fn step_pair(window: Rect) -> Result<AnalyticFamily, FamilyError> {
    AnalyticFamily::constants(&[ORIGIN, C64::new(1.0, 0.0)], ORIGIN, window)
}

/// `A_1 = 0`, `A_2 = 1`, `A_3 = i`: harmonic parts `0`, `x`, `-y`.
pub fn quarter_triple(window: Rect) -> Result<AnalyticFamily, FamilyError> {
    AnalyticFamily::constants(&[ORIGIN, C64::new(1.0, 0.0), C64::new(0.0, 1.0)], ORIGIN, window)
}
