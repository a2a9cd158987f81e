//! One-dimensional thin-plate regression spline bases.
//!
//! A term with basis dimension `k` is built from `k` knots: `k - 2` radial
//! columns `|u - knot|^3 / 12` (constrained orthogonal to the affine functions)
//! plus the linear column. The covariate is rescaled to `u in [0, 1]` over the
//! training range. Columns are centered over the training sample, which drops
//! the constant, leaving `k - 1` columns ordered `[linear | radial...]`. The
//! penalty is the integrated squared second derivative, so the linear column
//! is unpenalized.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

pub const DEFAULT_BASIS_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothSpec {
    pub name: String,
    pub basis_dim: usize,
    pub knots: Vec<f64>,
    /// Training range `(min, max)` used for rescaling and extrapolation flags.
    pub range: (f64, f64),
}

impl SmoothSpec {
    /// Quantile knots and range taken from the sample.
    pub fn from_data(name: &str, values: &[f64], basis_dim: usize) -> Result<Self> {
        let knots = choose_knots(values, basis_dim)?;
        let range = (knots[0], knots[knots.len() - 1]);
        Ok(Self {
            name: name.to_string(),
            basis_dim,
            knots,
            range,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.basis_dim < 3 {
            return Err(Error::InvalidParameter(format!(
                "{}: basis dimension {} below 3",
                self.name, self.basis_dim
            )));
        }
        if self.knots.len() != self.basis_dim {
            return Err(Error::InvalidParameter(format!(
                "{}: {} knots for basis dimension {}",
                self.name,
                self.knots.len(),
                self.basis_dim
            )));
        }
        if !(self.range.0 < self.range.1) {
            return Err(Error::InvalidParameter(format!(
                "{}: degenerate data range",
                self.name
            )));
        }
        if self.knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Singular(format!(
                "{}: knots not strictly increasing",
                self.name
            )));
        }
        let tol = 1e-12 * (self.range.1 - self.range.0);
        if self.knots[0] < self.range.0 - tol || self.knots[self.basis_dim - 1] > self.range.1 + tol
        {
            return Err(Error::InvalidParameter(format!(
                "{}: knots outside data range",
                self.name
            )));
        }
        Ok(())
    }
}

/// `k` distinct quantile-spaced values including the sample min and max.
///
/// Quantiles (type 7) of the full sample are used when they are distinct;
/// otherwise quantiles of the distinct values.
pub fn choose_knots(values: &[f64], k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "basis dimension {k} below 2"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite covariate value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} distinct values, need at least {k}",
            distinct.len()
        )));
    }
    let grid = |data: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|j| quantile_sorted(data, j as f64 / (k - 1) as f64))
            .collect()
    };
    let knots = grid(&sorted);
    if knots.windows(2).all(|w| w[0] < w[1]) {
        Ok(knots)
    } else {
        Ok(grid(&distinct))
    }
}

fn radial(r: f64) -> f64 {
    r.abs().powi(3) / 12.0
}

/// Everything needed to evaluate a fitted smooth away from its training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothBasis {
    pub spec: SmoothSpec,
    /// `k x (k - 2)` orthonormal basis of the radial coefficients orthogonal
    /// to `[1, knot]`.
    pub constraint: DMatrix<f64>,
    /// Training column means subtracted from every raw basis row.
    pub centering: DVector<f64>,
    /// `(k - 1) x (k - 1)` penalty, zero on the linear column.
    pub penalty: DMatrix<f64>,
    /// Factor applied to the raw curvature penalty.
    pub penalty_scale: f64,
}

impl SmoothBasis {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn n_coefficients(&self) -> usize {
        self.spec.basis_dim - 1
    }

    fn rescale(&self, x: f64) -> f64 {
        let (lo, hi) = self.spec.range;
        (x - lo) / (hi - lo)
    }

    fn raw_row(&self, x: f64) -> DVector<f64> {
        let u = self.rescale(x);
        let k = self.spec.basis_dim;
        let radial_row = DVector::from_iterator(
            k,
            self.spec
                .knots
                .iter()
                .map(|kn| radial(u - self.rescale(*kn))),
        );
        let constrained = self.constraint.tr_mul(&radial_row);
        let mut row = DVector::zeros(k - 1);
        row[0] = u;
        row.rows_mut(1, k - 2).copy_from(&constrained);
        row
    }

    /// Centered basis row at `x`.
    pub fn row(&self, x: f64) -> DVector<f64> {
        self.raw_row(x) - &self.centering
    }

    pub fn is_extrapolated(&self, x: f64) -> bool {
        x < self.spec.range.0 || x > self.spec.range.1
    }

    /// Centered design matrix at the given covariate values.
    pub fn design(&self, xs: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(xs.len(), self.n_coefficients());
        for (i, x) in xs.iter().enumerate() {
            out.row_mut(i).copy_from(&self.row(*x).transpose());
        }
        out
    }

    /// `beta' S beta`.
    pub fn penalty_value(&self, coefficients: &DVector<f64>) -> f64 {
        coefficients.dot(&(&self.penalty * coefficients))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothTerm {
    pub basis: SmoothBasis,
    /// `n x (k - 1)` centered design block at the training values.
    pub design: DMatrix<f64>,
    pub lambda: f64,
}

/// A fitted curve value at one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub x: f64,
    pub value: f64,
    pub extrapolated: bool,
}

/// Orthonormal completion of the columns of `t` (full column rank) to `R^k`,
/// returning only the complement.
fn orthogonal_complement(t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = t.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(k);
    let candidates = t
        .column_iter()
        .map(|c| c.into_owned())
        .chain((0..k).map(|i| DVector::from_fn(k, |r, _| if r == i { 1.0 } else { 0.0 })));
    let fixed = t.ncols();
    for (idx, mut v) in candidates.enumerate() {
        if basis.len() == k {
            break;
        }
        // Two passes of modified Gram-Schmidt.
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v.axpy(-proj, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
        } else if idx < fixed {
            return Err(Error::Singular("collinear knots".into()));
        }
    }
    let complement: Vec<_> = basis.into_iter().skip(fixed).collect();
    Ok(DMatrix::from_columns(&complement))
}

/// Builds the centered basis and penalty for one covariate sample.
pub fn build_term(values: &[f64], spec: &SmoothSpec) -> Result<SmoothTerm> {
    spec.validate()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "{}: non-finite covariate value",
            spec.name
        )));
    }
    if values.len() < spec.basis_dim {
        return Err(Error::InsufficientData(format!(
            "{}: {} values for basis dimension {}",
            spec.name,
            values.len(),
            spec.basis_dim
        )));
    }
    let k = spec.basis_dim;
    let (lo, hi) = spec.range;
    let scaled_knots: Vec<f64> = spec.knots.iter().map(|kn| (kn - lo) / (hi - lo)).collect();
    let affine = DMatrix::from_fn(k, 2, |r, c| if c == 0 { 1.0 } else { scaled_knots[r] });
    let constraint = orthogonal_complement(&affine)?;
    let gram = DMatrix::from_fn(k, k, |i, j| radial(scaled_knots[i] - scaled_knots[j]));
    let radial_penalty = constraint.transpose() * &gram * &constraint;
    let radial_penalty = (&radial_penalty + radial_penalty.transpose()) * 0.5;

    let eig = SymmetricEigen::new(radial_penalty.clone());
    let max_eig = eig.eigenvalues.max();
    if !(max_eig > 0.0) || eig.eigenvalues.min() <= 1e-12 * max_eig {
        return Err(Error::Singular(format!(
            "{}: rank-deficient curvature penalty",
            spec.name
        )));
    }

    let mut basis = SmoothBasis {
        spec: spec.clone(),
        constraint,
        centering: DVector::zeros(k - 1),
        penalty: DMatrix::zeros(k - 1, k - 1),
        penalty_scale: 1.0,
    };
    let raw = basis.design(values);
    let n = values.len() as f64;
    basis.centering = DVector::from_iterator(k - 1, raw.column_iter().map(|c| c.sum() / n));
    let design = basis.design(values);

    let mut penalty = DMatrix::zeros(k - 1, k - 1);
    penalty
        .view_mut((1, 1), (k - 2, k - 2))
        .copy_from(&radial_penalty);
    let gram_norm = (design.transpose() * &design).norm();
    let scale = if gram_norm > 0.0 {
        gram_norm / penalty.norm()
    } else {
        1.0
    };
    basis.penalty = penalty * scale;
    basis.penalty_scale = scale;

    Ok(SmoothTerm {
        basis,
        design,
        lambda: 0.0,
    })
}

/// `b(x)' coefficients` on a grid, flagging points outside the training range.
pub fn evaluate_term(
    basis: &SmoothBasis,
    coefficients: &DVector<f64>,
    grid: &[f64],
) -> Result<Vec<CurvePoint>> {
    if coefficients.len() != basis.n_coefficients() {
        return Err(Error::InvalidParameter(format!(
            "{}: {} coefficients for {} basis columns",
            basis.name(),
            coefficients.len(),
            basis.n_coefficients()
        )));
    }
    Ok(grid
        .iter()
        .map(|&x| CurvePoint {
            x,
            value: basis.row(x).dot(coefficients),
            extrapolated: basis.is_extrapolated(x),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-5.0..45.0)).collect()
    }

    fn term(values: &[f64]) -> SmoothTerm {
        let spec = SmoothSpec::from_data("x", values, DEFAULT_BASIS_DIM).unwrap();
        build_term(values, &spec).unwrap()
    }

    #[test]
    fn knots_on_uniform_grid() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        let knots = choose_knots(&values, 6).unwrap();
        let expected = [1.0, 20.8, 40.6, 60.4, 80.2, 100.0];
        for (a, b) in knots.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn too_few_distinct_values() {
        assert!(choose_knots(&[1.0, 2.0, 3.0, 4.0, 5.0, 5.0, 1.0], 6).is_err());
        let mut ties = vec![7.0; 50];
        ties.push(1.0);
        ties.push(9.0);
        assert!(choose_knots(&ties, 6).is_err());
    }

    #[test]
    fn heavy_ties_fall_back_to_distinct_values() {
        let mut values = vec![0.0; 90];
        values.extend((1..=10).map(f64::from));
        let knots = choose_knots(&values, 6).unwrap();
        assert!(knots.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(knots[0], 0.0);
        assert_eq!(knots[5], 10.0);
    }

    #[test]
    fn k6_has_five_columns() {
        let t = term(&sample(200, 1));
        assert_eq!(t.design.ncols(), 5);
        assert_eq!(t.basis.penalty.nrows(), 5);
    }

    #[test]
    fn penalty_eigen_reconstruction() {
        let t = term(&sample(200, 2));
        let s = &t.basis.penalty;
        assert!((s - s.transpose()).amax() < 1e-12 * s.amax());
        let eig = SymmetricEigen::new(s.clone());
        let rebuilt = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues)
            * eig.eigenvectors.transpose();
        assert!((rebuilt - s).amax() < 1e-10);
        let zero = eig
            .eigenvalues
            .iter()
            .filter(|v| v.abs() < 1e-9 * s.amax())
            .count();
        assert_eq!(zero, 1);
    }

    #[test]
    fn penalty_is_integrated_squared_curvature() {
        // Oracle: Simpson integration of f''(u)^2 where
        // f''(u) = sum_j delta_j |u - knot_j| / 2 for the radial part.
        let t = term(&sample(300, 3));
        let basis = &t.basis;
        let (lo, hi) = basis.spec.range;
        let knots: Vec<f64> = basis
            .spec
            .knots
            .iter()
            .map(|k| (k - lo) / (hi - lo))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let gamma = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let delta = &basis.constraint * &gamma;
            let f2 = |u: f64| {
                knots
                    .iter()
                    .zip(delta.iter())
                    .map(|(k, d)| d * (u - k).abs() / 2.0)
                    .sum::<f64>()
            };
            let n = 20000;
            let h = 1.0 / n as f64;
            let mut acc = f2(0.0).powi(2) + f2(1.0).powi(2);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * f2(i as f64 * h).powi(2);
            }
            let integral = acc * h / 3.0;
            let mut coef = DVector::zeros(5);
            coef.rows_mut(1, 4).copy_from(&gamma);
            let quad = basis.penalty_value(&coef) / basis.penalty_scale;
            assert!(
                (integral - quad).abs() < 1e-6 * integral.max(1e-12),
                "{integral} vs {quad}"
            );
        }
    }

    #[test]
    fn columns_sum_to_zero() {
        let t = term(&sample(500, 4));
        for col in t.design.column_iter() {
            assert!(col.sum().abs() < 1e-9);
        }
    }

    #[test]
    fn affine_functions_reproduced_without_penalty() {
        let xs = sample(150, 5);
        let t = term(&xs);
        let y = DVector::from_iterator(xs.len(), xs.iter().map(|x| 3.0 - 0.7 * x));
        // Least squares on [1 | design].
        let mut x = DMatrix::zeros(xs.len(), 6);
        x.column_mut(0).fill(1.0);
        x.view_mut((0, 1), (xs.len(), 5)).copy_from(&t.design);
        let beta = x.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        let resid = (&x * &beta - &y).amax();
        assert!(resid < 1e-8, "residual {resid}");
        let smooth_coef = beta.rows(1, 5).into_owned();
        assert!(t.basis.penalty_value(&smooth_coef).abs() < 1e-10);
    }

    #[test]
    fn evaluation_matches_design_at_training_points() {
        let xs = sample(80, 6);
        let t = term(&xs);
        let coef = DVector::from_vec(vec![0.3, -1.0, 0.5, 2.0, -0.2]);
        let curve = evaluate_term(&t.basis, &coef, &xs).unwrap();
        let direct = &t.design * &coef;
        for (p, d) in curve.iter().zip(direct.iter()) {
            assert!((p.value - d).abs() < 1e-12);
            assert!(!p.extrapolated);
        }
    }

    #[test]
    fn zero_coefficients_and_extrapolation_flag() {
        let xs = sample(80, 7);
        let t = term(&xs);
        let zero = DVector::zeros(5);
        let curve = evaluate_term(&t.basis, &zero, &[0.0, 10.0, 1000.0]).unwrap();
        assert!(curve.iter().all(|p| p.value == 0.0));
        assert!(curve[2].extrapolated);
        assert!(!curve[1].extrapolated);
        assert!(evaluate_term(&t.basis, &DVector::zeros(4), &[0.0]).is_err());
    }

    #[test]
    fn scale_equivariant() {
        let xs = sample(120, 8);
        let scaled: Vec<f64> = xs.iter().map(|x| x * 37.5).collect();
        let a = term(&xs);
        let b = term(&scaled);
        assert!((&a.design - &b.design).amax() < 1e-9);
        assert!((&a.basis.penalty - &b.basis.penalty).amax() < 1e-9 * a.basis.penalty.amax());
    }

    #[test]
    fn unsorted_knots_rejected() {
        let xs = sample(50, 10);
        let mut spec = SmoothSpec::from_data("x", &xs, 6).unwrap();
        spec.knots.swap(1, 2);
        assert!(build_term(&xs, &spec).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn penalty_psd(seed in 0u64..1000) {
            let t = term(&sample(60, seed));
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            for _ in 0..1000 {
                let v = DVector::from_fn(5, |_, _| rng.random_range(-10.0..10.0));
                prop_assert!(t.basis.penalty_value(&v) >= -1e-10);
            }
        }

        #[test]
        fn centered_fit_has_zero_mean(seed in 0u64..1000) {
            let xs = sample(90, seed);
            let t = term(&xs);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let coef = DVector::from_fn(5, |_, _| rng.random_range(-5.0..5.0));
            let curve = evaluate_term(&t.basis, &coef, &xs).unwrap();
            let mean = curve.iter().map(|p| p.value).sum::<f64>() / xs.len() as f64;
            prop_assert!(mean.abs() < 1e-8);
        }
    }
}
