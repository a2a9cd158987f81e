//! Daily effective reproductive number from case and test counts.
//!
//! Pipeline per province: test-volume adjustment, back-dating by the
//! infection-to-report delay, centered smoothing, and the renewal ratio
//! `R_t = I_t / sum_s w_s I_{t-s}`.

mod distributions;
mod incidence;

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Diagnostic, ObservationRow, Panel};

pub use distributions::{discretize_generation_interval, DelayModel, GenerationInterval};
pub use incidence::{
    adjust_for_testing, default_test_floor, shift_to_infection_dates, AdjustedIncidence,
    InfectionSeries,
};

pub const RT_MIN: f64 = 0.01;
pub const RT_MAX: f64 = 10.0;
const DENOMINATOR_EPS: f64 = 1e-9;

/// Estimator settings; each field maps to a `gi.*`, `delay.*` or `rt.*` config key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtConfig {
    pub gi_mean: f64,
    pub gi_sd: f64,
    pub gi_max_lag: usize,
    pub incubation_days: usize,
    pub delay_mean: f64,
    pub delay_sd: f64,
    pub delay_max: usize,
    pub half_width: usize,
    /// `None` picks the 1st percentile of each province's non-zero tests.
    pub test_floor: Option<f64>,
}

impl Default for RtConfig {
    fn default() -> Self {
        Self {
            gi_mean: 4.7,
            gi_sd: 2.9,
            gi_max_lag: 20,
            incubation_days: 5,
            delay_mean: 5.0,
            delay_sd: 3.0,
            delay_max: 21,
            half_width: 3,
            test_floor: None,
        }
    }
}

impl RtConfig {
    pub fn generation_interval(&self) -> Result<GenerationInterval> {
        discretize_generation_interval(self.gi_mean, self.gi_sd, self.gi_max_lag)
    }

    /// `delay_max = 0` drops the onset-to-report stage, leaving a point mass
    /// at the incubation period.
    pub fn delay_model(&self) -> Result<DelayModel> {
        if self.delay_max == 0 {
            return Ok(DelayModel::point_mass(self.incubation_days));
        }
        DelayModel::lognormal(
            self.incubation_days,
            self.delay_mean,
            self.delay_sd,
            self.delay_max,
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DayFlags {
    /// Insufficient history or smoothing window, or a vanishing denominator.
    pub undefined: bool,
    /// Depends on infections whose delay mass is incomplete.
    pub provisional: bool,
    /// Raw ratio fell outside `[RT_MIN, RT_MAX]`.
    pub clipped: bool,
    /// The day's test count was raised to the floor.
    pub test_floor: bool,
}

impl DayFlags {
    const NAMES: [&'static str; 4] = ["undefined", "provisional", "clipped", "test_floor"];

    fn bits(&self) -> [bool; 4] {
        [
            self.undefined,
            self.provisional,
            self.clipped,
            self.test_floor,
        ]
    }
}

impl fmt::Display for DayFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let set: Vec<&str> = Self::NAMES
            .iter()
            .zip(self.bits())
            .filter_map(|(n, b)| b.then_some(*n))
            .collect();
        if set.is_empty() {
            f.write_str("ok")
        } else {
            f.write_str(&set.join("+"))
        }
    }
}

impl FromStr for DayFlags {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut flags = DayFlags::default();
        if s == "ok" {
            return Ok(flags);
        }
        for part in s.split('+') {
            match part {
                "undefined" => flags.undefined = true,
                "provisional" => flags.provisional = true,
                "clipped" => flags.clipped = true,
                "test_floor" => flags.test_floor = true,
                other => {
                    return Err(Error::InvalidParameter(format!(
                        "unknown rt flag `{other}`"
                    )))
                }
            }
        }
        Ok(flags)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtDay {
    pub date: NaiveDate,
    pub rt: Option<f64>,
    /// Test-adjusted reported incidence; absent when read back from a file.
    pub adjusted_incidence: Option<f64>,
    pub flags: DayFlags,
}

impl RtDay {
    /// The estimate when it is defined and final.
    pub fn usable(&self) -> Option<f64> {
        if self.flags.undefined || self.flags.provisional {
            None
        } else {
            self.rt
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtSeries {
    pub province: String,
    pub days: Vec<RtDay>,
    pub config: Option<RtConfig>,
}

impl RtSeries {
    pub fn get(&self, date: NaiveDate) -> Option<&RtDay> {
        self.days
            .binary_search_by_key(&date, |d| d.date)
            .ok()
            .map(|i| &self.days[i])
    }
}

/// Renewal-ratio output aligned with the input series.
#[derive(Debug, Clone, PartialEq)]
pub struct RtEstimate {
    pub rt: Vec<Option<f64>>,
    pub clipped: Vec<bool>,
}

/// Centered moving average; `None` where the window leaves the series.
fn smooth(values: &[f64], half_width: usize) -> Vec<Option<f64>> {
    let n = values.len();
    let width = (2 * half_width + 1) as f64;
    (0..n)
        .map(|t| {
            (t >= half_width && t + half_width < n)
                .then(|| values[t - half_width..=t + half_width].iter().sum::<f64>() / width)
        })
        .collect()
}

/// Renewal estimate on a smoothed infection series.
///
/// A day is defined when its smoothing window and the full generation-interval
/// history behind it lie inside the series and the denominator is at least
/// 1e-9. Defined values are clipped to `[RT_MIN, RT_MAX]`.
pub fn estimate_rt(
    infections: &[f64],
    gi: &GenerationInterval,
    half_width: usize,
) -> Result<RtEstimate> {
    let max_lag = gi.max_lag();
    if infections.len() <= max_lag {
        return Err(Error::InsufficientData(format!(
            "series of {} days not longer than max lag {max_lag}",
            infections.len()
        )));
    }
    if infections.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidParameter(
            "infections must be finite and non-negative".into(),
        ));
    }
    if infections.iter().all(|v| *v == 0.0) {
        return Err(Error::InsufficientData("incidence is entirely zero".into()));
    }
    let smoothed = smooth(infections, half_width);
    let n = infections.len();
    let mut rt = vec![None; n];
    let mut clipped = vec![false; n];
    for t in (max_lag + half_width)..n {
        let Some(numerator) = smoothed[t] else {
            continue;
        };
        let denominator: f64 = (1..=max_lag)
            .map(|s| gi.weight(s) * smoothed[t - s].expect("history inside window"))
            .sum();
        if denominator < DENOMINATOR_EPS {
            continue;
        }
        let ratio = numerator / denominator;
        let value = ratio.clamp(RT_MIN, RT_MAX);
        clipped[t] = value != ratio;
        rt[t] = Some(value);
    }
    Ok(RtEstimate { rt, clipped })
}

/// Full estimator for one contiguous daily series of counts.
pub fn estimate_contiguous(
    province: &str,
    start: NaiveDate,
    cases: &[f64],
    tests: &[u64],
    config: &RtConfig,
) -> Result<RtSeries> {
    let gi = config.generation_interval()?;
    let delay = config.delay_model()?;
    estimate_contiguous_with(province, start, cases, tests, config, &gi, &delay)
}

pub(crate) fn estimate_contiguous_with(
    province: &str,
    start: NaiveDate,
    cases: &[f64],
    tests: &[u64],
    config: &RtConfig,
    gi: &GenerationInterval,
    delay: &DelayModel,
) -> Result<RtSeries> {
    let floor = config
        .test_floor
        .unwrap_or_else(|| default_test_floor(tests));
    let adjusted = adjust_for_testing(cases, tests, floor)?;
    let infections = shift_to_infection_dates(&adjusted.values, delay)?;
    let estimate = estimate_rt(&infections.values, gi, config.half_width)?;
    let n = cases.len();
    let days = (0..n)
        .map(|t| {
            let window_end = (t + config.half_width).min(n - 1);
            RtDay {
                date: start + chrono::Duration::days(t as i64),
                rt: estimate.rt[t],
                adjusted_incidence: Some(adjusted.values[t]),
                flags: DayFlags {
                    undefined: estimate.rt[t].is_none(),
                    provisional: infections.provisional[window_end],
                    clipped: estimate.clipped[t],
                    test_floor: adjusted.floored[t],
                },
            }
        })
        .collect();
    Ok(RtSeries {
        province: province.to_string(),
        days,
        config: Some(config.clone()),
    })
}

/// Estimates every province of a panel, independently and in parallel.
///
/// Each maximal run of consecutive dates is estimated on its own; runs too
/// short for the delay and generation-interval support come back as
/// undefined days with a diagnostic.
pub fn estimate_panel_rt(
    panel: &Panel,
    config: &RtConfig,
) -> Result<(Vec<RtSeries>, Vec<Diagnostic>)> {
    let gi = config.generation_interval()?;
    let delay = config.delay_model()?;
    let results: Vec<Result<(RtSeries, Vec<Diagnostic>)>> = panel
        .provinces()
        .par_iter()
        .map(|province| {
            let rows: Vec<&ObservationRow> = panel.province_rows(province).collect();
            estimate_province_runs(province, &rows, config, &gi, &delay)
        })
        .collect();
    let mut series = Vec::with_capacity(results.len());
    let mut diagnostics = Vec::new();
    for result in results {
        let (s, d) = result?;
        series.push(s);
        diagnostics.extend(d);
    }
    Ok((series, diagnostics))
}

fn estimate_province_runs(
    province: &str,
    rows: &[&ObservationRow],
    config: &RtConfig,
    gi: &GenerationInterval,
    delay: &DelayModel,
) -> Result<(RtSeries, Vec<Diagnostic>)> {
    let mut days = Vec::with_capacity(rows.len());
    let mut diagnostics = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let mut end = start + 1;
        while end < rows.len() && (rows[end].date - rows[end - 1].date).num_days() == 1 {
            end += 1;
        }
        let run = &rows[start..end];
        let cases: Vec<f64> = run.iter().map(|r| r.new_cases as f64).collect();
        let tests: Vec<u64> = run.iter().map(|r| r.new_tests).collect();
        match estimate_contiguous_with(province, run[0].date, &cases, &tests, config, gi, delay) {
            Ok(s) => days.extend(s.days),
            Err(err @ (Error::InsufficientData(_) | Error::InvalidParameter(_))) => {
                diagnostics.push(Diagnostic::new(
                    0,
                    "rt",
                    format!(
                        "{province}: run {}..{} not estimated: {err}",
                        run[0].date,
                        run[run.len() - 1].date
                    ),
                ));
                days.extend(run.iter().map(|r| RtDay {
                    date: r.date,
                    rt: None,
                    adjusted_incidence: None,
                    flags: DayFlags {
                        undefined: true,
                        ..DayFlags::default()
                    },
                }));
            }
            Err(other) => return Err(other),
        }
        start = end;
    }
    Ok((
        RtSeries {
            province: province.to_string(),
            days,
            config: Some(config.clone()),
        },
        diagnostics,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gi() -> GenerationInterval {
        discretize_generation_interval(4.7, 2.9, 14).unwrap()
    }

    #[test]
    fn constant_incidence_gives_one() {
        let est = estimate_rt(&[250.0; 60], &gi(), 3).unwrap();
        let defined: Vec<f64> = est.rt.iter().flatten().copied().collect();
        assert_eq!(defined.len(), 60 - 14 - 3 - 3);
        for r in defined {
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn geometric_matches_euler_lotka() {
        let gi = gi();
        for rho in [0.95f64, 1.02, 1.1] {
            let series: Vec<f64> = (0..80).map(|t| 10.0 * rho.powi(t)).collect();
            let est = estimate_rt(&series, &gi, 3).unwrap();
            let expected = 1.0
                / (1..=14)
                    .map(|s| gi.weight(s) * rho.powi(-(s as i32)))
                    .sum::<f64>();
            for r in est.rt.iter().flatten() {
                assert!((r - expected).abs() < 1e-9, "{r} vs {expected}");
            }
        }
    }

    #[test]
    fn zero_series_is_error() {
        assert!(estimate_rt(&[0.0; 30], &gi(), 3).is_err());
        assert!(estimate_rt(&[1.0; 10], &gi(), 3).is_err());
    }

    #[test]
    fn leading_zeros_are_undefined_not_zero() {
        let mut series = vec![0.0; 40];
        series.extend(vec![5.0; 40]);
        let est = estimate_rt(&series, &gi(), 3).unwrap();
        assert!(est.rt[25].is_none());
        assert!(est.rt.iter().flatten().all(|r| *r > 0.0));
    }

    #[test]
    fn clipping_is_flagged() {
        let mut series = vec![1.0; 40];
        series.extend(vec![1e6; 10]);
        let est = estimate_rt(&series, &gi(), 0).unwrap();
        assert_eq!(est.rt[40], Some(RT_MAX));
        assert!(est.clipped[40]);
    }

    #[test]
    fn flags_round_trip() {
        let flags = DayFlags {
            provisional: true,
            clipped: true,
            ..DayFlags::default()
        };
        assert_eq!(flags.to_string(), "provisional+clipped");
        assert_eq!("provisional+clipped".parse::<DayFlags>().unwrap(), flags);
        assert_eq!("ok".parse::<DayFlags>().unwrap(), DayFlags::default());
        assert!("bogus".parse::<DayFlags>().is_err());
    }

    #[test]
    fn contiguous_pipeline_flags_tail_as_provisional() {
        let config = RtConfig::default();
        let start = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
        let series = estimate_contiguous("A", start, &[100.0; 90], &[1000; 90], &config).unwrap();
        let delay_max = config.delay_model().unwrap().max_delay();
        assert!(series.days[89].flags.provisional);
        // Provisional once the smoothing window reaches the incomplete tail.
        let first_provisional = series
            .days
            .iter()
            .position(|d| d.flags.provisional)
            .unwrap();
        assert_eq!(first_provisional, 90 - delay_max - config.half_width);
        for day in &series.days {
            if let Some(r) = day.usable() {
                assert!((r - 1.0).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn scale_invariant(
            series in prop::collection::vec(0.5f64..1000.0, 30..60),
            k in 1e-3f64..1e3,
        ) {
            let gi = gi();
            let base = estimate_rt(&series, &gi, 3).unwrap();
            let scaled: Vec<f64> = series.iter().map(|v| v * k).collect();
            let other = estimate_rt(&scaled, &gi, 3).unwrap();
            for (a, b) in base.rt.iter().zip(&other.rt) {
                match (a, b) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9 * a.max(1.0)),
                    (None, None) => {}
                    _ => prop_assert!(false, "definedness changed under scaling"),
                }
            }
        }
    }
}
