//! Complex polynomials and the families of analytic pieces built from them.
//!
//! A family holds the pieces `A_i`, a base point `p` and a rectangular
//! working window. Each piece has a potential `f_i` with `f_i' = A_i` and
//! `f_i(p) = 0`, and a harmonic part `H_i = Re f_i`.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::FamilyError;

pub type C64 = Complex<f64>;

/// Largest family size supported. Tie sets in labelings are stored as bit masks.
pub const MAX_MEMBERS: usize = 64;

/// Polynomial with complex coefficients in ascending degree.
///
/// Trailing zero coefficients are stripped on construction, so the zero
/// polynomial has an empty coefficient list and equality is coefficient-wise.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<C64>", into = "Vec<C64>")]
pub struct ComplexPolynomial {
    coeffs: Vec<C64>,
}

impl From<Vec<C64>> for ComplexPolynomial {
    fn from(coeffs: Vec<C64>) -> Self {
        Self::new(coeffs)
    }
}

impl From<ComplexPolynomial> for Vec<C64> {
    fn from(p: ComplexPolynomial) -> Self {
        p.coeffs
    }
}

impl ComplexPolynomial {
    pub fn new(mut coeffs: Vec<C64>) -> Self {
        while coeffs.last().is_some_and(|c| *c == C64::new(0.0, 0.0)) {
            coeffs.pop();
        }
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: Vec::new() }
    }

    pub fn constant(c: C64) -> Self {
        Self::new(vec![c])
    }

    /// Builds a polynomial from `(re, im)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        Self::new(pairs.iter().map(|&(re, im)| C64::new(re, im)).collect())
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Index of the last nonzero coefficient; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    /// Horner evaluation.
    pub fn eval(&self, z: C64) -> C64 {
        self.coeffs.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    pub fn derivative(&self) -> Self {
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| c * k as f64)
                .collect(),
        )
    }

    /// The antiderivative `F` with `F' = self` and `F(base) = 0`.
    pub fn antiderivative(&self, base: C64) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        let mut coeffs = Vec::with_capacity(self.coeffs.len() + 1);
        coeffs.push(C64::new(0.0, 0.0));
        coeffs.extend(self.coeffs.iter().enumerate().map(|(k, &c)| c / (k + 1) as f64));
        let mut f = Self::new(coeffs);
        let offset = f.eval(base);
        f.coeffs[0] -= offset;
        // an exact zero constant term must not leave a trailing zero behind
        Self::new(f.coeffs)
    }

    pub fn sub(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let zero = C64::new(0.0, 0.0);
        Self::new(
            (0..n)
                .map(|k| self.coeffs.get(k).copied().unwrap_or(zero) - other.coeffs.get(k).copied().unwrap_or(zero))
                .collect(),
        )
    }

    /// Upper bound of `|self(z)|` over `|z| <= radius`.
    pub fn bound_on_disk(&self, radius: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * radius + c.norm())
    }
}

/// Free-function form of [`ComplexPolynomial::eval`].
pub fn evaluate(poly: &ComplexPolynomial, z: C64) -> C64 {
    poly.eval(z)
}

/// Free-function form of [`ComplexPolynomial::antiderivative`].
pub fn antiderivative(poly: &ComplexPolynomial, base: C64) -> ComplexPolynomial {
    poly.antiderivative(base)
}

/// Axis-aligned rectangle `[min.re, max.re] x [min.im, max.im]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: C64,
    pub max: C64,
}

impl Rect {
    pub fn new(min: C64, max: C64) -> Self {
        Self { min, max }
    }

    /// Square `[-half, half]^2` translated to `center`.
    pub fn square(center: C64, half: f64) -> Self {
        let d = C64::new(half, half);
        Self::new(center - d, center + d)
    }

    pub fn width(&self) -> f64 {
        self.max.re - self.min.re
    }

    pub fn height(&self) -> f64 {
        self.max.im - self.min.im
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn center(&self) -> C64 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, z: C64) -> bool {
        z.re >= self.min.re && z.re <= self.max.re && z.im >= self.min.im && z.im <= self.max.im
    }

    /// Distance from an inside point to the rectangle boundary (negative outside).
    pub fn clearance(&self, z: C64) -> f64 {
        (z.re - self.min.re)
            .min(self.max.re - z.re)
            .min(z.im - self.min.im)
            .min(self.max.im - z.im)
    }

    pub fn is_valid(&self) -> bool {
        self.width() > 0.0 && self.height() > 0.0 && self.width().is_finite() && self.height().is_finite()
    }

    /// Largest modulus over the rectangle.
    pub fn max_modulus(&self) -> f64 {
        let x = self.min.re.abs().max(self.max.re.abs());
        let y = self.min.im.abs().max(self.max.im.abs());
        x.hypot(y)
    }
}

/// The pieces `A_1..A_r`, the base point and the working window.
#[derive(Clone, Debug)]
pub struct AnalyticFamily {
    members: Vec<ComplexPolynomial>,
    potentials: Vec<ComplexPolynomial>,
    base_point: C64,
    window: Rect,
}

impl AnalyticFamily {
    pub fn new(members: Vec<ComplexPolynomial>, base_point: C64, window: Rect) -> Result<Self, FamilyError> {
        if members.len() < 2 {
            return Err(FamilyError::TooFewMembers(members.len()));
        }
        if members.len() > MAX_MEMBERS {
            return Err(FamilyError::TooManyMembers(members.len()));
        }
        for (i, a) in members.iter().enumerate() {
            if a.coeffs().iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(FamilyError::NonFinite(i));
            }
            for (j, b) in members.iter().enumerate().skip(i + 1) {
                if a == b {
                    return Err(FamilyError::DuplicateMembers(i, j));
                }
            }
        }
        if !window.is_valid() {
            return Err(FamilyError::EmptyWindow);
        }
        if !window.contains(base_point) {
            return Err(FamilyError::BaseOutsideWindow);
        }
        let potentials = members.iter().map(|a| a.antiderivative(base_point)).collect();
        Ok(Self {
            members,
            potentials,
            base_point,
            window,
        })
    }

    /// Family of constant pieces.
    pub fn constants(values: &[C64], base_point: C64, window: Rect) -> Result<Self, FamilyError> {
        Self::new(
            values.iter().map(|&c| ComplexPolynomial::constant(c)).collect(),
            base_point,
            window,
        )
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[ComplexPolynomial] {
        &self.members
    }

    pub fn base_point(&self) -> C64 {
        self.base_point
    }

    pub fn window(&self) -> Rect {
        self.window
    }

    /// Same pieces on a different window.
    pub fn with_window(&self, window: Rect) -> Result<Self, FamilyError> {
        Self::new(self.members.clone(), self.base_point, window)
    }

    fn check(&self, i: usize) -> Result<(), FamilyError> {
        if i < self.members.len() {
            Ok(())
        } else {
            Err(FamilyError::IndexOutOfRange {
                index: i,
                len: self.members.len(),
            })
        }
    }

    /// The potential `f_i`, anchored so that `f_i(p) = 0`.
    pub fn potential(&self, i: usize) -> Result<&ComplexPolynomial, FamilyError> {
        self.check(i)?;
        Ok(&self.potentials[i])
    }

    pub fn member(&self, i: usize) -> Result<&ComplexPolynomial, FamilyError> {
        self.check(i)?;
        Ok(&self.members[i])
    }

    /// `A_i(z)`.
    pub fn value(&self, i: usize, z: C64) -> Result<C64, FamilyError> {
        self.check(i)?;
        Ok(self.a(i, z))
    }

    /// `H_i(z) = Re f_i(z)`.
    pub fn harmonic_part(&self, i: usize, z: C64) -> Result<f64, FamilyError> {
        self.check(i)?;
        Ok(self.h(i, z))
    }

    /// Gradient of `H_i` encoded as `dH/dx + i dH/dy`, which is `conj(A_i(z))`.
    pub fn gradient(&self, i: usize, z: C64) -> Result<C64, FamilyError> {
        self.check(i)?;
        Ok(self.a(i, z).conj())
    }

    #[inline]
    pub(crate) fn a(&self, i: usize, z: C64) -> C64 {
        self.members[i].eval(z)
    }

    #[inline]
    pub(crate) fn h(&self, i: usize, z: C64) -> f64 {
        if z == self.base_point {
            return 0.0;
        }
        self.potentials[i].eval(z).re
    }

    /// All `A_i(z)`.
    pub fn values_at(&self, z: C64) -> Vec<C64> {
        (0..self.len()).map(|i| self.a(i, z)).collect()
    }

    /// All `H_i(z)`.
    pub fn harmonics_at(&self, z: C64) -> Vec<f64> {
        (0..self.len()).map(|i| self.h(i, z)).collect()
    }

    /// Upper bound of `max_i |A_i|` over the window.
    pub fn gradient_bound(&self) -> f64 {
        let r = self.window.max_modulus();
        self.members.iter().map(|a| a.bound_on_disk(r)).fold(0.0, f64::max)
    }

    /// Upper bound of `|A_i - A_j|` over the window.
    pub fn difference_bound(&self, i: usize, j: usize) -> f64 {
        let r = self.window.max_modulus();
        self.members[i].sub(&self.members[j]).bound_on_disk(r)
    }

    /// Largest pairwise difference bound, used for continuity estimates.
    pub fn max_difference_bound(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                m = m.max(self.difference_bound(i, j));
            }
        }
        m
    }

    /// Relabels members by `perm`: member `k` of the result is member `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, FamilyError> {
        let members = perm
            .iter()
            .map(|&k| self.member(k).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(members, self.base_point, self.window)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn cusp_family() -> AnalyticFamily {
        AnalyticFamily::new(
            vec![
                ComplexPolynomial::zero(),
                ComplexPolynomial::from_pairs(&[(4.0, 0.0), (2.0, 0.0)]),
                ComplexPolynomial::from_pairs(&[(-1.0, 0.0)]),
            ],
            c(0.0, 0.0),
            Rect::square(c(0.0, 0.0), 1.0),
        )
        .unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let p = ComplexPolynomial::from_pairs(&[(4.0, 0.0), (2.0, 0.0)]);
        assert_eq!(evaluate(&p, c(0.0, 0.0)), c(4.0, 0.0));
        assert_eq!(evaluate(&ComplexPolynomial::zero(), c(3.0, 4.0)), c(0.0, 0.0));
        let sq = ComplexPolynomial::from_pairs(&[(0.0, 0.0), (0.0, 0.0), (1.0, 0.0)]);
        assert_eq!(evaluate(&sq, c(1.0, 1.0)), c(0.0, 2.0));
    }

    #[test]
    fn trailing_zeros_stripped() {
        let p = ComplexPolynomial::from_pairs(&[(1.0, 0.0), (0.0, 0.0)]);
        assert_eq!(p, ComplexPolynomial::constant(c(1.0, 0.0)));
        assert_eq!(p.degree(), Some(0));
        assert!(ComplexPolynomial::from_pairs(&[(0.0, 0.0)]).is_zero());
        assert_eq!(ComplexPolynomial::zero().degree(), None);
    }

    #[test]
    fn antiderivative_examples() {
        let p = ComplexPolynomial::from_pairs(&[(4.0, 0.0), (2.0, 0.0)]);
        assert_eq!(
            antiderivative(&p, c(0.0, 0.0)),
            ComplexPolynomial::from_pairs(&[(0.0, 0.0), (4.0, 0.0), (1.0, 0.0)])
        );
        assert!(antiderivative(&ComplexPolynomial::zero(), c(2.0, -1.0)).is_zero());
        let one = ComplexPolynomial::constant(c(1.0, 0.0));
        assert_eq!(
            antiderivative(&one, c(1.0, 1.0)),
            ComplexPolynomial::from_pairs(&[(-1.0, -1.0), (1.0, 0.0)])
        );
    }

    #[test]
    fn harmonic_parts_of_cusp_family() {
        let fam = cusp_family();
        for &(x, y) in &[(0.3, -0.2), (-0.7, 0.5), (0.1, 0.9)] {
            let z = c(x, y);
            assert!((fam.harmonic_part(1, z).unwrap() - (4.0 * x + x * x - y * y)).abs() < 1e-14);
            assert!((fam.harmonic_part(2, z).unwrap() + x).abs() < 1e-15);
            assert_eq!(fam.harmonic_part(0, z).unwrap(), 0.0);
        }
        for i in 0..3 {
            assert_eq!(fam.harmonic_part(i, c(0.0, 0.0)).unwrap(), 0.0);
        }
        assert!(fam.harmonic_part(3, c(0.0, 0.0)).is_err());
    }

    #[test]
    fn anchoring_at_nonzero_base() {
        let fam = AnalyticFamily::new(
            vec![
                ComplexPolynomial::from_pairs(&[(1.0, 2.0), (0.5, -1.0), (0.0, 0.3)]),
                ComplexPolynomial::constant(c(0.0, 1.0)),
            ],
            c(0.25, -0.4),
            Rect::square(c(0.0, 0.0), 1.0),
        )
        .unwrap();
        for i in 0..2 {
            assert_eq!(fam.harmonic_part(i, c(0.25, -0.4)).unwrap(), 0.0);
            assert!(fam.potential(i).unwrap().eval(c(0.25, -0.4)).norm() < 1e-15);
        }
    }

    #[test]
    fn gradient_examples() {
        let fam = cusp_family();
        assert_eq!(fam.gradient(1, c(0.0, 0.0)).unwrap(), c(4.0, 0.0));
        assert_eq!(fam.gradient(1, c(0.0, 1.0)).unwrap(), c(4.0, -2.0));
        let fam = AnalyticFamily::constants(&[c(0.0, 1.0), c(1.0, 0.0)], c(0.0, 0.0), Rect::square(c(0.0, 0.0), 1.0))
            .unwrap();
        assert_eq!(fam.gradient(0, c(0.4, -0.3)).unwrap(), c(0.0, -1.0));
    }

    #[test]
    fn gradient_matches_finite_differences_at_i() {
        let fam = cusp_family();
        let z = c(0.0, 1.0);
        let h = 1e-5;
        let gx = (fam.h(1, z + h) - fam.h(1, z - h)) / (2.0 * h);
        let gy = (fam.h(1, z + c(0.0, h)) - fam.h(1, z - c(0.0, h))) / (2.0 * h);
        let g = fam.gradient(1, z).unwrap();
        assert!((gx - g.re).abs() < 1e-6 && (gy - g.im).abs() < 1e-6);
    }

    fn random_family(rng: &mut ChaCha8Rng) -> AnalyticFamily {
        let r = rng.gen_range(2..5);
        let members = (0..r)
            .map(|_| {
                let deg = rng.gen_range(0..4);
                ComplexPolynomial::new(
                    (0..=deg)
                        .map(|_| c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)))
                        .collect(),
                )
            })
            .collect();
        AnalyticFamily::new(members, c(0.1, -0.2), Rect::square(c(0.0, 0.0), 1.0)).unwrap()
    }

    #[test]
    fn finite_difference_gradient_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fam = random_family(&mut rng);
        let h = 1e-5 * fam.window().diagonal();
        for _ in 0..1000 {
            let z = c(rng.gen_range(-0.99..0.99), rng.gen_range(-0.99..0.99));
            for i in 0..fam.len() {
                let gx = (fam.h(i, z + h) - fam.h(i, z - h)) / (2.0 * h);
                let gy = (fam.h(i, z + c(0.0, h)) - fam.h(i, z - c(0.0, h))) / (2.0 * h);
                let g = fam.gradient(i, z).unwrap();
                let err = (c(gx, gy) - g).norm();
                assert!(err <= 1e-6 * g.norm().max(1.0), "member {i} at {z}: {err}");
            }
        }
    }

    #[test]
    fn mean_value_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let fam = random_family(&mut rng);
            let z = c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let rho = rng.gen_range(0.05..0.45);
            for i in 0..fam.len() {
                let n = 720;
                let mean = (0..n)
                    .map(|k| {
                        let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                        fam.h(i, z + C64::from_polar(rho, t))
                    })
                    .sum::<f64>()
                    / n as f64;
                let centre = fam.h(i, z);
                let scale = centre.abs().max(fam.gradient_bound() * rho);
                assert!((mean - centre).abs() <= 1e-8 * scale, "{mean} vs {centre}");
            }
        }
    }

    #[test]
    fn family_validation() {
        let w = Rect::square(c(0.0, 0.0), 1.0);
        let one = ComplexPolynomial::constant(c(1.0, 0.0));
        assert!(matches!(
            AnalyticFamily::new(vec![one.clone()], c(0.0, 0.0), w),
            Err(FamilyError::TooFewMembers(1))
        ));
        assert!(matches!(
            AnalyticFamily::new(
                vec![one.clone(), ComplexPolynomial::from_pairs(&[(1.0, 0.0), (0.0, 0.0)])],
                c(0.0, 0.0),
                w
            ),
            Err(FamilyError::DuplicateMembers(0, 1))
        ));
        assert!(matches!(
            AnalyticFamily::new(vec![one, ComplexPolynomial::zero()], c(2.0, 0.0), w),
            Err(FamilyError::BaseOutsideWindow)
        ));
    }

    proptest! {
        #[test]
        fn antiderivative_inverts_derivative(
            coeffs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 0..7),
            bre in -2.0f64..2.0, bim in -2.0f64..2.0,
        ) {
            let p = ComplexPolynomial::from_pairs(&coeffs);
            let base = c(bre, bim);
            let f = p.antiderivative(base);
            let back = f.derivative();
            prop_assert_eq!(back.coeffs().len(), p.coeffs().len());
            for (a, b) in back.coeffs().iter().zip(p.coeffs()) {
                prop_assert!((a - b).norm() <= 1e-12 * b.norm().max(1.0));
            }
            prop_assert!(f.eval(base).norm() <= 1e-12 * (1.0 + p.bound_on_disk(base.norm()) * base.norm()));
        }
    }
}
