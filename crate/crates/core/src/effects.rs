//! Partial-effect curves with confidence bands, per-province refits and
//! leave-one-province-out cross-validation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gam::{assemble_design, fit_design, fit_gam, FittedGam, ModelSpec};
use crate::panel::{Diagnostic, Panel};
use crate::rt::RtSeries;

pub const DEFAULT_GRID_SIZE: usize = 200;
const Z_95: f64 = 1.96;
/// Extra rows a per-province fit needs beyond its coefficient count.
const MIN_SPARE_ROWS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectPoint {
    pub x: f64,
    pub effect: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialEffect {
    pub term: String,
    pub points: Vec<EffectPoint>,
}

impl PartialEffect {
    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.effect).collect()
    }
}

/// Evenly spaced grid of `size` points over the term's training range.
pub fn effect_grid(model: &FittedGam, term: &str, size: usize) -> Result<Vec<f64>> {
    if size < 2 {
        return Err(Error::InvalidParameter(
            "grid needs at least 2 points".into(),
        ));
    }
    let (lo, hi) = model.term(term)?.basis.spec.range;
    let step = (hi - lo) / (size - 1) as f64;
    Ok((0..size).map(|i| lo + step * i as f64).collect())
}

/// Partial effect of `term` on the default training-range grid.
pub fn partial_effects(model: &FittedGam, term: &str, size: usize) -> Result<PartialEffect> {
    let grid = effect_grid(model, term, size)?;
    partial_effects_at(model, term, &grid)
}

/// Partial effect at arbitrary points; `se(x) = sqrt(b(x)' V_j b(x))`.
pub fn partial_effects_at(model: &FittedGam, term: &str, grid: &[f64]) -> Result<PartialEffect> {
    let fitted = model.term(term)?;
    let beta = model.term_coefficients(fitted);
    let cov = model.term_covariance(fitted);
    let points = grid
        .iter()
        .map(|&x| {
            let b = fitted.basis.row(x);
            let effect = b.dot(&beta);
            let se = (&cov * &b).dot(&b).max(0.0).sqrt();
            EffectPoint {
                x,
                effect,
                se,
                lo: effect - Z_95 * se,
                hi: effect + Z_95 * se,
                extrapolated: fitted.basis.is_extrapolated(x),
            }
        })
        .collect();
    Ok(PartialEffect {
        term: term.to_string(),
        points,
    })
}

#[derive(Debug, Clone)]
pub struct ProvinceFit {
    pub province: String,
    pub model: FittedGam,
}

/// Fits the model separately to each province (single intercept).
/// Provinces with too few usable rows, or whose fit fails, are skipped with
/// a diagnostic.
pub fn fit_per_province(
    panel: &Panel,
    rt: &[RtSeries],
    spec: &ModelSpec,
) -> Result<(Vec<ProvinceFit>, Vec<Diagnostic>)> {
    spec.validate()?;
    let columns = 1 + spec
        .smooths
        .iter()
        .map(|s| s.basis_dim.saturating_sub(1))
        .sum::<usize>();
    let outcomes: Vec<std::result::Result<ProvinceFit, String>> = panel
        .provinces()
        .par_iter()
        .map(|province| {
            let sub = panel
                .filter_provinces(|p| p == province)
                .map_err(|e| e.to_string())?;
            let design = assemble_design(&sub, rt, spec).map_err(|e| e.to_string())?;
            if design.n() <= columns + MIN_SPARE_ROWS {
                return Err(format!(
                    "{province}: {} usable rows, need more than {}",
                    design.n(),
                    columns + MIN_SPARE_ROWS
                ));
            }
            let model = fit_design(&design, &spec.grid, spec.sweeps)
                .map_err(|e| format!("{province}: {e}"))?;
            Ok(ProvinceFit {
                province: province.clone(),
                model,
            })
        })
        .collect();
    let mut fits = Vec::new();
    let mut diagnostics = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(fit) => fits.push(fit),
            Err(reason) => diagnostics.push(Diagnostic::new(0, "per-province", reason)),
        }
    }
    Ok((fits, diagnostics))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvFold {
    pub province: String,
    /// Mean squared error of predicted `ln R_t`; `None` if the fold failed.
    pub mse: Option<f64>,
    /// Held-out rows scored.
    pub n: usize,
    pub training_provinces: Vec<String>,
    /// SHA-256 of the sorted training province names, newline-joined.
    pub training_hash: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<CvFold>,
    /// Mean of per-fold MSEs over folds that succeeded.
    pub mean_mse: f64,
}

impl CvReport {
    pub fn fold(&self, province: &str) -> Option<&CvFold> {
        self.folds.iter().find(|f| f.province == province)
    }

    pub fn failed(&self) -> impl Iterator<Item = &CvFold> {
        self.folds.iter().filter(|f| f.mse.is_none())
    }
}

pub fn province_set_hash(provinces: &[String]) -> String {
    let mut sorted = provinces.to_vec();
    sorted.sort();
    let digest = Sha256::digest(sorted.join("\n").as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn run_fold(panel: &Panel, rt: &[RtSeries], spec: &ModelSpec, held_out: &str) -> Result<CvFold> {
    let training = panel.filter_provinces(|p| p != held_out)?;
    let training_provinces = training.provinces().to_vec();
    if training_provinces.iter().any(|p| p == held_out) {
        return Err(Error::InvalidParameter(format!(
            "fold {held_out}: held-out province in training set"
        )));
    }
    let training_hash = province_set_hash(&training_provinces);
    let outcome = fit_gam(&training, rt, spec).and_then(|model| {
        let level = model.mean_intercept();
        let series = rt
            .iter()
            .find(|s| s.province == held_out)
            .ok_or_else(|| Error::InsufficientData(format!("{held_out} has no R_t series")))?;
        let mut sse = 0.0;
        let mut n = 0;
        for row in panel.province_rows(held_out) {
            let Some(value) = series.get(row.date).and_then(|d| d.usable()) else {
                continue;
            };
            let residual = value.ln() - model.predict_row(row, level)?;
            sse += residual * residual;
            n += 1;
        }
        if n == 0 {
            return Err(Error::InsufficientData(format!(
                "{held_out} has no usable rows to score"
            )));
        }
        Ok((sse / n as f64, n))
    });
    let (mse, n, error) = match outcome {
        Ok((mse, n)) => (Some(mse), n, None),
        Err(e) => (None, 0, Some(e.to_string())),
    };
    Ok(CvFold {
        province: held_out.to_string(),
        mse,
        n,
        training_provinces,
        training_hash,
        error,
    })
}

/// Leave-one-province-out cross-validation. A held-out province's level is
/// the mean of the training intercepts. Fold failures are recorded on the
/// fold and the remaining folds still run.
pub fn lopo_cv(panel: &Panel, rt: &[RtSeries], spec: &ModelSpec) -> Result<CvReport> {
    spec.validate()?;
    if panel.provinces().len() < 3 {
        return Err(Error::InsufficientData(format!(
            "cross-validation needs at least 3 provinces, got {}",
            panel.provinces().len()
        )));
    }
    let folds = panel
        .provinces()
        .par_iter()
        .map(|p| run_fold(panel, rt, spec, p))
        .collect::<Result<Vec<_>>>()?;
    let scored: Vec<f64> = folds.iter().filter_map(|f| f.mse).collect();
    let mean_mse = if scored.is_empty() {
        f64::NAN
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    Ok(CvReport { folds, mean_mse })
}
