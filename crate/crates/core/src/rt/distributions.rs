use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma, LogNormal, Normal};

use crate::error::{Error, Result};

/// Above this gamma shape the CDF is taken from the matching normal.
const NORMAL_APPROX_SHAPE: f64 = 1e4;

/// Discrete generation-interval distribution over lags `1..=max_lag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationInterval {
    pub mean_days: f64,
    pub sd_days: f64,
    /// `weights[s - 1]` is the mass at lag `s`.
    pub weights: Vec<f64>,
}

impl GenerationInterval {
    pub fn max_lag(&self) -> usize {
        self.weights.len()
    }

    /// Weight at lag `s` (zero outside `1..=max_lag`).
    pub fn weight(&self, lag: usize) -> f64 {
        if lag == 0 || lag > self.weights.len() {
            0.0
        } else {
            self.weights[lag - 1]
        }
    }

    pub fn discretized_mean(&self) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| (i + 1) as f64 * w)
            .sum()
    }

    /// Builds from explicit lag-1-based weights, renormalizing.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let weights = normalize(weights)?;
        let mean: f64 = weights
            .iter()
            .enumerate()
            .map(|(i, w)| (i + 1) as f64 * w)
            .sum();
        let var: f64 = weights
            .iter()
            .enumerate()
            .map(|(i, w)| ((i + 1) as f64 - mean).powi(2) * w)
            .sum();
        Ok(Self {
            mean_days: mean,
            sd_days: var.sqrt(),
            weights,
        })
    }
}

impl Default for GenerationInterval {
    fn default() -> Self {
        discretize_generation_interval(4.7, 2.9, 20).expect("default generation interval")
    }
}

fn gamma_cdf(mean: f64, sd: f64) -> Result<Box<dyn Fn(f64) -> f64>> {
    let shape = (mean / sd).powi(2);
    let rate = mean / (sd * sd);
    if shape > NORMAL_APPROX_SHAPE {
        let normal = Normal::new(mean, sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        return Ok(Box::new(move |x| normal.cdf(x)));
    }
    let gamma = Gamma::new(shape, rate).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(Box::new(move |x| if x <= 0.0 { 0.0 } else { gamma.cdf(x) }))
}

/// Gamma distribution with the given mean and SD, binned to whole days.
///
/// Lag `s` collects the mass on `[s - 0.5, s + 0.5)`, with lag 1 also taking
/// `[0, 0.5)` since same-day transmission is excluded. Weights are
/// renormalized over `1..=max_lag`.
pub fn discretize_generation_interval(
    mean_days: f64,
    sd_days: f64,
    max_lag: usize,
) -> Result<GenerationInterval> {
    if !(mean_days > 0.0 && sd_days > 0.0) || !mean_days.is_finite() || !sd_days.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "generation interval needs positive mean and sd (got {mean_days}, {sd_days})"
        )));
    }
    if (max_lag as f64) < 2.0 * mean_days {
        return Err(Error::InvalidParameter(format!(
            "max_lag {max_lag} shorter than twice the mean {mean_days}"
        )));
    }
    let cdf = gamma_cdf(mean_days, sd_days)?;
    let weights: Vec<f64> = (1..=max_lag)
        .map(|s| {
            let lo = if s == 1 { 0.0 } else { s as f64 - 0.5 };
            (cdf(s as f64 + 0.5) - cdf(lo)).max(0.0)
        })
        .collect();
    Ok(GenerationInterval {
        mean_days,
        sd_days,
        weights: normalize(weights)?,
    })
}

/// Report delay: a fixed incubation period followed by a discrete
/// onset-to-report distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub incubation_days: usize,
    /// Mass at onset-to-report lags `0..=D`.
    pub onset_to_report: Vec<f64>,
    /// Total infection-to-report delay over lags `0..=incubation + D`.
    pub combined: Vec<f64>,
}

impl DelayModel {
    pub fn new(incubation_days: usize, onset_to_report: Vec<f64>) -> Result<Self> {
        let onset_to_report = normalize(onset_to_report)?;
        let mut incubation = vec![0.0; incubation_days + 1];
        incubation[incubation_days] = 1.0;
        let combined = convolve(&incubation, &onset_to_report);
        Ok(Self {
            incubation_days,
            onset_to_report,
            combined,
        })
    }

    /// Incubation point mass plus a discretized lognormal onset-to-report delay.
    pub fn lognormal(
        incubation_days: usize,
        mean_days: f64,
        sd_days: f64,
        max_delay: usize,
    ) -> Result<Self> {
        if !(mean_days > 0.0 && sd_days > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "onset delay needs positive mean and sd (got {mean_days}, {sd_days})"
            )));
        }
        let sigma2 = (1.0 + (sd_days / mean_days).powi(2)).ln();
        let mu = mean_days.ln() - sigma2 / 2.0;
        let dist = LogNormal::new(mu, sigma2.sqrt())
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let cdf = |x: f64| if x <= 0.0 { 0.0 } else { dist.cdf(x) };
        let weights = (0..=max_delay)
            .map(|d| (cdf(d as f64 + 0.5) - cdf(d as f64 - 0.5)).max(0.0))
            .collect();
        Self::new(incubation_days, weights)
    }

    /// All mass at a single total delay.
    pub fn point_mass(delay_days: usize) -> Self {
        Self::new(delay_days, vec![1.0]).expect("point mass is normalized")
    }

    /// Largest lag carrying positive mass.
    pub fn max_delay(&self) -> usize {
        self.combined.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }

    pub fn mean_delay(&self) -> f64 {
        self.combined
            .iter()
            .enumerate()
            .map(|(d, w)| d as f64 * w)
            .sum()
    }
}

impl Default for DelayModel {
    fn default() -> Self {
        Self::lognormal(5, 5.0, 3.0, 21).expect("default delay model")
    }
}

fn normalize(mut weights: Vec<f64>) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidParameter(
            "distribution weights must be finite and non-negative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidParameter(
            "distribution has no mass on its support".into(),
        ));
    }
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(weights)
}

pub(crate) fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}
