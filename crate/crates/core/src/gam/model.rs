use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::design::{assemble_design, Design};
use super::gcv::{select_lambdas_gcv, LambdaGrid};
use super::solve::PenalizedProblem;
use super::{Covariate, ModelSpec};
use crate::error::{Error, Result};
use crate::panel::{ObservationRow, Panel};
use crate::rt::RtSeries;
use crate::smooth::SmoothBasis;

/// Smallest reported p-value; chi-square tails below this underflow.
pub const P_VALUE_FLOOR: f64 = 1e-300;
const PSEUDO_INVERSE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTerm {
    pub basis: SmoothBasis,
    pub lambda: f64,
    /// Coefficient span within the full coefficient vector.
    pub columns: Range<usize>,
    /// Effective degrees of freedom of the penalized (curvature) part.
    pub edf: f64,
    /// Effective degrees of freedom of the unpenalized linear column.
    pub null_edf: f64,
    pub wald_statistic: f64,
    pub wald_rank: usize,
    pub p_value: f64,
}

impl FittedTerm {
    pub fn name(&self) -> &str {
        self.basis.name()
    }

    /// Total flexibility of the term, linear part included.
    pub fn total_edf(&self) -> f64 {
        self.edf + self.null_edf
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedGam {
    /// Fixed-effect levels in coefficient order.
    pub groups: Vec<String>,
    pub terms: Vec<FittedTerm>,
    pub coefficients: DVector<f64>,
    /// Bayesian posterior covariance `(X'X + S_lambda)^{-1} sigma2`.
    pub covariance: DMatrix<f64>,
    pub sigma2: f64,
    pub total_edf: f64,
    pub gcv_score: f64,
    pub r2: f64,
    pub adjusted_r2: f64,
    pub n: usize,
    pub rss: f64,
    pub tss: f64,
    pub excluded_rows: usize,
    pub lambda_grid: LambdaGrid,
    pub sweeps: usize,
    /// Fitted values at the training rows (not serialized).
    #[serde(skip)]
    pub fitted: Vec<f64>,
}

impl FittedGam {
    pub fn term(&self, name: &str) -> Result<&FittedTerm> {
        self.terms
            .iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| Error::UnknownTerm(name.to_string()))
    }

    pub fn term_coefficients(&self, term: &FittedTerm) -> DVector<f64> {
        self.coefficients
            .rows_range(term.columns.clone())
            .into_owned()
    }

    pub fn term_covariance(&self, term: &FittedTerm) -> DMatrix<f64> {
        let c = term.columns.clone();
        self.covariance
            .view((c.start, c.start), (c.len(), c.len()))
            .into_owned()
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.coefficients.as_slice()[..self.groups.len()]
    }

    pub fn intercept(&self, group: &str) -> Option<f64> {
        self.groups
            .iter()
            .position(|g| g == group)
            .map(|i| self.coefficients[i])
    }

    pub fn mean_intercept(&self) -> f64 {
        let b = self.intercepts();
        b.iter().sum::<f64>() / b.len() as f64
    }

    /// Sum of smooth contributions; `values` follows the order of `terms`.
    pub fn smooth_sum(&self, values: &[f64]) -> f64 {
        self.terms
            .iter()
            .zip(values)
            .map(|(term, &x)| {
                let c = term.columns.clone();
                term.basis.row(x).dot(&self.coefficients.rows_range(c))
            })
            .sum()
    }

    /// Covariate values of a panel row in term order.
    pub fn row_values(&self, row: &ObservationRow) -> Result<Vec<f64>> {
        self.terms
            .iter()
            .map(|t| Covariate::from_name(t.name()).map(|c| c.value(row)))
            .collect()
    }

    /// Predicted `ln R_t` at a panel row given the level (intercept) to use.
    pub fn predict_row(&self, row: &ObservationRow, level: f64) -> Result<f64> {
        Ok(level + self.smooth_sum(&self.row_values(row)?))
    }

    pub fn residual_df(&self) -> f64 {
        self.n as f64 - self.total_edf
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Wald statistic `f' V_f^- f` of a term evaluated at the training rows,
/// computed through the QR factor of its design block.
fn wald_test(block: &DMatrix<f64>, beta: &DVector<f64>, cov: &DMatrix<f64>) -> (f64, usize, f64) {
    let r = block.clone().qr().r();
    let f = &r * beta;
    let vf = &r * cov * r.transpose();
    let eig = SymmetricEigen::new((&vf + vf.transpose()) * 0.5);
    let max = eig.eigenvalues.max();
    if !(max > 0.0) {
        return (0.0, 0, 1.0);
    }
    let mut stat = 0.0;
    let mut rank = 0;
    for (i, &d) in eig.eigenvalues.iter().enumerate() {
        if d > PSEUDO_INVERSE_TOL * max {
            let proj = eig.eigenvectors.column(i).dot(&f);
            stat += proj * proj / d;
            rank += 1;
        }
    }
    let p = ChiSquared::new(rank as f64)
        .map(|chi| chi.sf(stat))
        .unwrap_or(1.0)
        .max(P_VALUE_FLOOR);
    (stat, rank, p)
}

/// GCV lambda selection and final penalized fit on an assembled design.
pub fn fit_design(design: &Design, grid: &LambdaGrid, sweeps: usize) -> Result<FittedGam> {
    grid.validate()?;
    let penalties: Vec<(Range<usize>, DMatrix<f64>)> = design
        .terms
        .iter()
        .zip(&design.blocks)
        .map(|(t, b)| (b.clone(), t.basis.penalty.clone()))
        .collect();
    let problem = PenalizedProblem::new(&design.x, &design.y, &penalties)?;
    let mut order: Vec<usize> = (0..design.terms.len()).collect();
    order.sort_by(|&a, &b| {
        design.terms[a]
            .basis
            .name()
            .cmp(design.terms[b].basis.name())
    });
    let selection = select_lambdas_gcv(&problem, &grid.values(), &order, sweeps)?;
    let fit = selection.fit;

    let n = design.n();
    if fit.trace >= n as f64 {
        return Err(Error::InsufficientData(format!(
            "total EDF {:.2} not below n = {n}",
            fit.trace
        )));
    }
    let sigma2 = fit.rss / (n as f64 - fit.trace);
    let covariance = &fit.inverse * sigma2;
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    let mean_y = design.y.mean();
    let tss: f64 = design.y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let r2 = if tss > 0.0 { 1.0 - fit.rss / tss } else { 0.0 };
    let adjusted_r2 = if tss > 0.0 && n > 1 {
        1.0 - sigma2 / (tss / (n as f64 - 1.0))
    } else {
        0.0
    };

    let terms = design
        .terms
        .iter()
        .zip(&design.blocks)
        .zip(&selection.lambdas)
        .map(|((term, block), &lambda)| {
            let beta = fit.beta.rows_range(block.clone()).into_owned();
            let cov = covariance
                .view((block.start, block.start), (block.len(), block.len()))
                .into_owned();
            let x_block = design.x.columns_range(block.clone()).into_owned();
            let (wald_statistic, wald_rank, p_value) = wald_test(&x_block, &beta, &cov);
            FittedTerm {
                basis: term.basis.clone(),
                lambda,
                columns: block.clone(),
                edf: fit.block_edf(block.start + 1..block.end),
                null_edf: fit.edf[block.start],
                wald_statistic,
                wald_rank,
                p_value,
            }
        })
        .collect();

    let fitted = (&design.x * &fit.beta).iter().copied().collect();
    Ok(FittedGam {
        groups: design.groups.clone(),
        terms,
        coefficients: fit.beta,
        covariance,
        sigma2,
        total_edf: fit.trace,
        gcv_score: selection.gcv,
        r2,
        adjusted_r2,
        n,
        rss: fit.rss,
        tss,
        excluded_rows: design.excluded,
        lambda_grid: *grid,
        sweeps,
        fitted,
    })
}

/// Assembles the panel design and fits it.
pub fn fit_gam(panel: &Panel, rt: &[RtSeries], spec: &ModelSpec) -> Result<FittedGam> {
    let design = assemble_design(panel, rt, spec)?;
    fit_design(&design, &spec.grid, spec.sweeps)
}
