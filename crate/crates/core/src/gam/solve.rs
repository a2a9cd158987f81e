use std::ops::Range;

use nalgebra::{DMatrix, DVector, Dyn, SymmetricEigen, QR};

use crate::error::{Error, Result};

/// Penalized least squares `min ||y - X b||^2 + sum_j lambda_j b_j' S_j b_j`,
/// reduced once through `X = Q R0` so each smoothing-parameter trial only
/// factors a small augmented matrix `[R0; sqrt(lambda_j) S_j^{1/2}]`.
#[derive(Debug, Clone)]
pub struct PenalizedProblem {
    n: usize,
    r0: DMatrix<f64>,
    qty: DVector<f64>,
    rss_perp: f64,
    /// Column span and square-root factor (rows) of each penalty.
    roots: Vec<(Range<usize>, DMatrix<f64>)>,
}

#[derive(Debug, Clone)]
pub struct PenalizedFit {
    pub beta: DVector<f64>,
    pub rss: f64,
    /// Diagonal of `(X'X + S_lambda)^{-1} X'X`; sums to the hat-matrix trace.
    pub edf: DVector<f64>,
    pub trace: f64,
    /// `(X'X + S_lambda)^{-1}`.
    pub inverse: DMatrix<f64>,
}

impl PenalizedFit {
    pub fn block_edf(&self, span: Range<usize>) -> f64 {
        self.edf.rows_range(span).sum()
    }
}

/// Symmetric square root factor `D^{1/2} U'` with negative eigenvalues clipped.
fn penalty_root(s: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

impl PenalizedProblem {
    pub fn new(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        penalties: &[(Range<usize>, DMatrix<f64>)],
    ) -> Result<Self> {
        let (n, p) = x.shape();
        if y.len() != n {
            return Err(Error::InvalidParameter("response length mismatch".into()));
        }
        if n < p {
            return Err(Error::InsufficientData(format!(
                "{n} rows for {p} coefficients"
            )));
        }
        for (span, s) in penalties {
            if span.end > p || s.nrows() != span.len() || s.ncols() != span.len() {
                return Err(Error::InvalidParameter("penalty block out of range".into()));
            }
        }
        let qr = x.clone().qr();
        let r0 = qr.r();
        let mut qty_full = y.clone();
        qr.q_tr_mul(&mut qty_full);
        let qty = qty_full.rows(0, p).into_owned();
        let rss_perp = qty_full.rows_range(p..).norm_squared();
        let roots = penalties
            .iter()
            .map(|(span, s)| (span.clone(), penalty_root(s)))
            .collect();
        Ok(Self {
            n,
            r0,
            qty,
            rss_perp,
            roots,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_coefficients(&self) -> usize {
        self.r0.ncols()
    }

    pub fn n_penalties(&self) -> usize {
        self.roots.len()
    }

    fn check_lambdas(&self, lambdas: &[f64]) -> Result<()> {
        if lambdas.len() != self.roots.len() {
            return Err(Error::InvalidParameter(format!(
                "{} lambdas for {} penalties",
                lambdas.len(),
                self.roots.len()
            )));
        }
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::InvalidParameter(
                "lambdas must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    /// QR of `[R0; sqrt(lambda_j) S_j^{1/2}]`.
    fn augmented_qr(&self, lambdas: &[f64]) -> Result<(QR<f64, Dyn, Dyn>, DMatrix<f64>)> {
        self.check_lambdas(lambdas)?;
        let p = self.n_coefficients();
        let extra: usize = self.roots.iter().map(|(span, _)| span.len()).sum();
        let mut aug = DMatrix::zeros(p + extra, p);
        aug.view_mut((0, 0), (p, p)).copy_from(&self.r0);
        let mut row = p;
        for ((span, root), lambda) in self.roots.iter().zip(lambdas) {
            let m = span.len();
            aug.view_mut((row, span.start), (m, m))
                .copy_from(&(root * lambda.sqrt()));
            row += m;
        }
        let qr = aug.qr();
        let r = qr.r();
        let diag_max = r.diagonal().amax();
        if !(diag_max > 0.0) || r.diagonal().iter().any(|d| d.abs() <= 1e-10 * diag_max) {
            return Err(Error::Singular(
                "penalized normal equations are rank deficient".into(),
            ));
        }
        Ok((qr, r))
    }

    /// `(rss, trace)` without forming the inverse. With `[R0; B] = QR` and
    /// `Q1` the top block of `Q`, the influence trace is `||Q1||_F^2`.
    pub fn score(&self, lambdas: &[f64]) -> Result<(f64, f64)> {
        let (qr, r) = self.augmented_qr(lambdas)?;
        let p = self.n_coefficients();
        let q1 = qr.q().rows(0, p).into_owned();
        let rhs = q1.tr_mul(&self.qty);
        let beta = r
            .solve_upper_triangular(&rhs)
            .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
        let rss = (&self.qty - &self.r0 * &beta).norm_squared() + self.rss_perp;
        Ok((rss, q1.norm_squared()))
    }

    pub fn fit(&self, lambdas: &[f64]) -> Result<PenalizedFit> {
        let p = self.n_coefficients();
        let (_, r) = self.augmented_qr(lambdas)?;
        let r_inv = r
            .solve_upper_triangular(&DMatrix::identity(p, p))
            .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
        let inverse = &r_inv * r_inv.transpose();
        // beta = (R0'R0 + S)^{-1} R0' Q'y
        let beta = &inverse * (self.r0.tr_mul(&self.qty));
        let rss = (&self.qty - &self.r0 * &beta).norm_squared() + self.rss_perp;
        let xtx = self.r0.tr_mul(&self.r0);
        let influence = &inverse * xtx;
        let edf = influence.diagonal();
        let trace = edf.sum();
        Ok(PenalizedFit {
            beta,
            rss,
            edf,
            trace,
            inverse,
        })
    }
}
