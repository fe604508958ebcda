//! Piecewise-harmonic potentials `max_i H_i`, piecewise-analytic fields
//! `sum_i A_i chi_i` built from polynomial data, and numerical checks of the
//! identities that tie them together: positivity of the distributional
//! `d/dz-bar` of the field, the interface density law of its Riesz measure,
//! and reconstruction of the field from the Cauchy transform of that measure.

// NaN inputs must fail range checks, so those are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod curves;
pub mod error;
pub mod field;
pub mod measure;
pub mod point;
pub mod presets;
pub mod reach;
pub mod scenario;

pub use analytic::{AnalyticFamily, ComplexPolynomial, Rect, C64};
pub use field::{CellLabel, GridWindow, PAField, RegionLabeling};
