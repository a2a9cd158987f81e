use serde::{Deserialize, Serialize};

use super::Panel;
use crate::error::{Error, Result};
use crate::rt::RtSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variable: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single value.
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl SummaryRow {
    pub fn from_values(variable: &str, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("summary variable has no values"));
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        // Summation rounding can push the mean a hair outside [min, max].
        let mean = mean.clamp(min, max);
        Ok(Self {
            variable: variable.to_string(),
            n,
            mean,
            sd,
            min,
            max,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn get(&self, variable: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.variable == variable)
    }
}

pub const SUMMARY_VARIABLES: [&str; 7] = [
    "daily_cases",
    "daily_tests",
    "temperature_c",
    "humidity_pct",
    "pm25",
    "mobility_decrease_pct",
    "rt",
];

/// Statistics pooled across all provinces and days. Rt values count only
/// when defined and not provisional.
pub fn summarize_panel(panel: &Panel, rt: Option<&[RtSeries]>) -> Result<SummaryTable> {
    if panel.is_empty() {
        return Err(Error::Empty("panel"));
    }
    let rows = panel.rows();
    let column = |f: fn(&super::ObservationRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let mut out = vec![
        SummaryRow::from_values(SUMMARY_VARIABLES[0], &column(|r| r.new_cases as f64))?,
        SummaryRow::from_values(SUMMARY_VARIABLES[1], &column(|r| r.new_tests as f64))?,
        SummaryRow::from_values(SUMMARY_VARIABLES[2], &column(|r| r.temperature_c))?,
        SummaryRow::from_values(SUMMARY_VARIABLES[3], &column(|r| r.humidity_pct))?,
        SummaryRow::from_values(SUMMARY_VARIABLES[4], &column(|r| r.pm25))?,
        SummaryRow::from_values(SUMMARY_VARIABLES[5], &column(|r| r.mobility_decrease_pct))?,
    ];
    if let Some(series) = rt {
        let values: Vec<f64> = series
            .iter()
            .filter(|s| panel.provinces().contains(&s.province))
            .flat_map(|s| s.days.iter().filter_map(|d| d.usable()))
            .collect();
        out.push(SummaryRow::from_values(SUMMARY_VARIABLES[6], &values)?);
    }
    Ok(SummaryTable { rows: out })
}
