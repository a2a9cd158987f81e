use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::solve::{PenalizedFit, PenalizedProblem};
use crate::error::{Error, Result};

/// Log-spaced smoothing-parameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self {
            min: 1e-6,
            max: 1e6,
            points: 61,
        }
    }
}

impl LambdaGrid {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min > 0.0
            && self.max.is_finite()
            && (self.points == 1 && self.min <= self.max || self.points > 1 && self.min < self.max);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "lambda grid needs 0 < min < max and points >= 1 (got {self:?})"
            )))
        }
    }

    /// Increasing grid values.
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let (lo, hi) = (self.min.log10(), self.max.log10());
        let step = (hi - lo) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| {
                if i == self.points - 1 {
                    self.max
                } else {
                    10f64.powf(lo + step * i as f64)
                }
            })
            .collect()
    }
}

/// `n * RSS / (n - tr A)^2`; infinite when the fit uses every degree of freedom.
pub fn gcv_score(n: usize, rss: f64, trace: f64) -> f64 {
    let denom = n as f64 - trace;
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        n as f64 * rss / (denom * denom)
    }
}

/// Index of the smallest score, preferring the later (larger lambda) index on
/// ties. `None` entries and NaN are skipped.
pub(crate) fn grid_argmin(scores: &[Option<f64>]) -> Option<usize> {
    let mut arg: Option<(usize, f64)> = None;
    for (g, score) in scores.iter().enumerate() {
        let Some(score) = score.filter(|s| !s.is_nan()) else {
            continue;
        };
        match arg {
            Some((_, best)) if score > best => {}
            _ => arg = Some((g, score)),
        }
    }
    arg.map(|(g, _)| g)
}

#[derive(Debug, Clone)]
pub struct GcvSelection {
    pub lambdas: Vec<f64>,
    pub gcv: f64,
    pub fit: PenalizedFit,
}

/// Coordinate descent over the grid: each term in `order` takes its grid
/// argmin with the others held fixed, for `sweeps` passes (stopping early
/// once a pass changes nothing). Equal scores resolve toward the larger
/// lambda. Every lambda starts at the grid point closest to 1.
pub fn select_lambdas_gcv(
    problem: &PenalizedProblem,
    grid: &[f64],
    order: &[usize],
    sweeps: usize,
) -> Result<GcvSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty lambda grid".into()));
    }
    if sweeps == 0 {
        return Err(Error::InvalidParameter("sweeps must be at least 1".into()));
    }
    let m = problem.n_penalties();
    if order.len() != m || order.iter().any(|j| *j >= m) {
        return Err(Error::InvalidParameter(
            "term order does not match penalties".into(),
        ));
    }
    let start = grid
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.ln().abs().total_cmp(&b.1.ln().abs()))
        .map(|(i, _)| i)
        .expect("grid not empty");
    let mut chosen = vec![start; m];
    let n = problem.n();
    for _ in 0..sweeps {
        let mut changed = false;
        for &term in order {
            let scores: Vec<Option<f64>> = (0..grid.len())
                .into_par_iter()
                .map(|g| {
                    let lambdas: Vec<f64> = chosen
                        .iter()
                        .enumerate()
                        .map(|(j, &idx)| if j == term { grid[g] } else { grid[idx] })
                        .collect();
                    problem
                        .score(&lambdas)
                        .ok()
                        .map(|(rss, trace)| gcv_score(n, rss, trace))
                })
                .collect();
            let Some(a) = grid_argmin(&scores) else {
                return Err(Error::Singular(
                    "every grid point gave a singular system".into(),
                ));
            };
            if a != chosen[term] {
                changed = true;
            }
            chosen[term] = a;
        }
        if !changed {
            break;
        }
    }
    let lambdas: Vec<f64> = chosen.iter().map(|&i| grid[i]).collect();
    let fit = problem.fit(&lambdas)?;
    let gcv = gcv_score(n, fit.rss, fit.trace);
    Ok(GcvSelection { lambdas, gcv, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn default_grid_shape() {
        let g = LambdaGrid::default().values();
        assert_eq!(g.len(), 61);
        assert!((g[0] - 1e-6).abs() < 1e-18);
        assert_eq!(g[60], 1e6);
        assert!((g[30] - 1.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn bad_grid_rejected() {
        let bad = LambdaGrid {
            min: 0.0,
            max: 1.0,
            points: 3,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn gcv_formula() {
        assert!((gcv_score(10, 2.0, 3.0) - 20.0 / 49.0).abs() < 1e-15);
        assert!(gcv_score(5, 1.0, 5.0).is_infinite());
    }

    #[test]
    fn ties_go_to_larger_lambda() {
        assert_eq!(
            grid_argmin(&[Some(2.0), Some(1.0), Some(1.0), Some(3.0)]),
            Some(2)
        );
        assert_eq!(grid_argmin(&[Some(1.0), None, Some(f64::NAN)]), Some(0));
        assert_eq!(grid_argmin(&[None, None]), None);
    }

    #[test]
    fn all_singular_is_error() {
        // Zero column with no penalty: singular at every grid point.
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let problem = PenalizedProblem::new(&x, &y, &[(0..1, DMatrix::identity(1, 1))]).unwrap();
        assert!(select_lambdas_gcv(&problem, &[1.0, 2.0], &[0], 1).is_err());
    }
}
