use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::ingest::{Diagnostic, RawSources};
use super::{ObservationRow, Panel, StudyWindow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelConfig {
    /// Provinces need strictly more cumulative cases than this.
    pub case_threshold: u64,
    pub window: StudyWindow,
    /// Maximum fraction of days with any missing field before a province is dropped.
    pub max_missing_frac: f64,
    /// Longest interior gap (days) filled by linear interpolation.
    pub max_interp_gap: usize,
}

impl Default for PanelConfig {
    fn default() -> Self {
        Self {
            case_threshold: 2000,
            window: StudyWindow::default(),
            max_missing_frac: 0.2,
            max_interp_gap: 3,
        }
    }
}

const COVARIATES: usize = 4;

struct Day {
    counts: Option<(u64, u64)>,
    covariates: [Option<f64>; COVARIATES],
}

fn check_unique<'a>(source: &str, keys: impl Iterator<Item = (&'a str, NaiveDate)>) -> Result<()> {
    let mut seen = HashSet::new();
    for (province, date) in keys {
        if !seen.insert((province, date)) {
            return Err(Error::DuplicateKey {
                source_name: source.into(),
                province: province.into(),
                date,
            });
        }
    }
    Ok(())
}

/// Joins the three sources on (province, date), applies the case threshold and
/// coverage rule, and fills short interior covariate gaps.
pub fn build_panel(raw: &RawSources, config: &PanelConfig) -> Result<(Panel, Vec<Diagnostic>)> {
    if !(0.0..=1.0).contains(&config.max_missing_frac) {
        return Err(Error::InvalidParameter(format!(
            "max_missing_frac {} outside [0, 1]",
            config.max_missing_frac
        )));
    }
    let window = config.window;
    check_unique(
        "cases",
        raw.cases.iter().map(|r| (r.province.as_str(), r.date)),
    )?;
    check_unique(
        "environment",
        raw.environment
            .iter()
            .map(|r| (r.province.as_str(), r.date)),
    )?;
    check_unique(
        "mobility",
        raw.mobility.iter().map(|r| (r.province.as_str(), r.date)),
    )?;

    let mut by_province: BTreeMap<&str, Vec<&super::CaseRecord>> = BTreeMap::new();
    for rec in raw.cases.iter().filter(|r| window.contains(r.date)) {
        by_province
            .entry(rec.province.as_str())
            .or_default()
            .push(rec);
    }
    let env: HashMap<(&str, NaiveDate), &super::EnvironmentRecord> = raw
        .environment
        .iter()
        .map(|r| ((r.province.as_str(), r.date), r))
        .collect();
    let mob: HashMap<(&str, NaiveDate), Option<f64>> = raw
        .mobility
        .iter()
        .map(|r| ((r.province.as_str(), r.date), r.mobility_decrease_pct))
        .collect();

    let mut diagnostics = Vec::new();
    let mut rows = Vec::new();
    for (province, mut cases) in by_province {
        cases.sort_by_key(|r| r.date);
        let cumulative: u64 = cases.iter().map(|r| r.new_cases).sum();
        if cumulative <= config.case_threshold {
            diagnostics.push(Diagnostic::new(
                0,
                "panel",
                format!(
                    "{province}: cumulative cases {cumulative} not above threshold {}",
                    config.case_threshold
                ),
            ));
            continue;
        }
        let region = cases[0].region.clone();
        let first = cases[0].date;
        let last = cases[cases.len() - 1].date;
        let counts: HashMap<NaiveDate, (u64, u64)> = cases
            .iter()
            .map(|r| (r.date, (r.new_cases, r.new_tests)))
            .collect();

        let n_days = (last - first).num_days() as usize + 1;
        let mut days: Vec<Day> = (0..n_days)
            .map(|i| {
                let date = first + Duration::days(i as i64);
                let e = env.get(&(province, date));
                Day {
                    counts: counts.get(&date).copied(),
                    covariates: [
                        e.and_then(|e| e.temperature_c),
                        e.and_then(|e| e.humidity_pct),
                        e.and_then(|e| e.pm25),
                        mob.get(&(province, date)).copied().flatten(),
                    ],
                }
            })
            .collect();

        let missing = days
            .iter()
            .filter(|d| d.counts.is_none() || d.covariates.iter().any(Option::is_none))
            .count();
        let frac = missing as f64 / n_days as f64;
        if frac > config.max_missing_frac {
            diagnostics.push(Diagnostic::new(
                0,
                "panel",
                format!(
                    "{province}: {:.1}% of days missing data exceeds {:.1}%",
                    100.0 * frac,
                    100.0 * config.max_missing_frac
                ),
            ));
            continue;
        }

        for field in 0..COVARIATES {
            let mut series: Vec<Option<f64>> = days.iter().map(|d| d.covariates[field]).collect();
            interpolate_gaps(&mut series, config.max_interp_gap);
            for (day, value) in days.iter_mut().zip(series) {
                day.covariates[field] = value;
            }
        }

        let before = rows.len();
        for (i, day) in days.iter().enumerate() {
            let (Some((new_cases, new_tests)), [Some(t), Some(h), Some(p), Some(m)]) =
                (day.counts, day.covariates)
            else {
                continue;
            };
            rows.push(ObservationRow {
                date: first + Duration::days(i as i64),
                province: province.to_string(),
                region: region.clone(),
                new_cases,
                new_tests,
                temperature_c: t,
                humidity_pct: h,
                pm25: p,
                mobility_decrease_pct: m,
            });
        }
        let kept = rows.len() - before;
        if kept < n_days {
            diagnostics.push(Diagnostic::new(
                0,
                "panel",
                format!("{province}: dropped {} incomplete days", n_days - kept),
            ));
        }
    }
    if rows.is_empty() {
        return Err(Error::NoProvinces);
    }
    Ok((Panel::from_rows(rows, window)?, diagnostics))
}

/// Linear interpolation of interior runs of `None` no longer than `max_gap`.
/// Runs touching either end are left missing.
pub(crate) fn interpolate_gaps(series: &mut [Option<f64>], max_gap: usize) {
    let mut i = 0;
    while i < series.len() {
        if series[i].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < series.len() && series[i].is_none() {
            i += 1;
        }
        let len = i - start;
        if start == 0 || i == series.len() || len > max_gap {
            continue;
        }
        let (Some(lo), Some(hi)) = (series[start - 1], series[i]) else {
            continue;
        };
        let span = (len + 1) as f64;
        for (k, slot) in series[start..i].iter_mut().enumerate() {
            let t = (k + 1) as f64 / span;
            *slot = Some(lo + t * (hi - lo));
        }
    }
}
