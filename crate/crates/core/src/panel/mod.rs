//! Per-province daily panel: source ingestion, joining, study-area filtering
//! and descriptive statistics.

mod build;
mod ingest;
mod summary;

use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use build::{build_panel, PanelConfig};
pub use ingest::{
    ingest_sources, parse_cases, parse_environment, parse_mobility, CaseRecord, Diagnostic,
    EnvironmentRecord, IngestConfig, MobilityRecord, RawSources,
};
pub(crate) use ingest::{Line, Records};
pub use ingest::{CASES_HEADER, ENVIRONMENT_HEADER, MOBILITY_HEADER};
pub use summary::{summarize_panel, SummaryRow, SummaryTable};

/// Inclusive calendar-date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl StudyWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::InvalidParameter(format!(
                "study window ends ({end}) before it starts ({start})"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        date >= self.start && date <= self.end
    }

    pub fn days(&self) -> i64 {
        (self.end - self.start).num_days() + 1
    }
}

impl Default for StudyWindow {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2020, 2, 24).expect("valid date"),
            end: NaiveDate::from_ymd_opt(2020, 8, 1).expect("valid date"),
        }
    }
}

/// One province-day with every analysis field populated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRow {
    pub date: NaiveDate,
    pub province: String,
    pub region: String,
    pub new_cases: u64,
    pub new_tests: u64,
    pub temperature_c: f64,
    pub humidity_pct: f64,
    pub pm25: f64,
    pub mobility_decrease_pct: f64,
}

impl ObservationRow {
    fn validate(&self) -> Result<()> {
        let finite = [
            self.temperature_c,
            self.humidity_pct,
            self.pm25,
            self.mobility_decrease_pct,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter(format!(
                "{} {}: non-finite covariate",
                self.province, self.date
            )));
        }
        if !(0.0..=100.0).contains(&self.humidity_pct) {
            return Err(Error::InvalidParameter(format!(
                "{} {}: humidity {} outside [0, 100]",
                self.province, self.date, self.humidity_pct
            )));
        }
        if self.pm25 < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "{} {}: negative pm25",
                self.province, self.date
            )));
        }
        Ok(())
    }
}

/// Validated multi-province panel, rows ordered by province then date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    rows: Vec<ObservationRow>,
    provinces: Vec<String>,
    window: StudyWindow,
}

impl Panel {
    /// Sorts and validates rows. Fails on duplicate keys, rows outside the
    /// window, or field invariant violations.
    pub fn from_rows(mut rows: Vec<ObservationRow>, window: StudyWindow) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::NoProvinces);
        }
        rows.sort_by(|a, b| a.province.cmp(&b.province).then(a.date.cmp(&b.date)));
        for pair in rows.windows(2) {
            if pair[0].province == pair[1].province && pair[0].date == pair[1].date {
                return Err(Error::DuplicateKey {
                    source_name: "panel".into(),
                    province: pair[0].province.clone(),
                    date: pair[0].date,
                });
            }
        }
        for row in &rows {
            if !window.contains(row.date) {
                return Err(Error::InvalidParameter(format!(
                    "{} {}: outside study window",
                    row.province, row.date
                )));
            }
            row.validate()?;
        }
        let provinces: BTreeSet<String> = rows.iter().map(|r| r.province.clone()).collect();
        Ok(Self {
            rows,
            provinces: provinces.into_iter().collect(),
            window,
        })
    }

    pub fn rows(&self) -> &[ObservationRow] {
        &self.rows
    }

    /// Sorted province identifiers.
    pub fn provinces(&self) -> &[String] {
        &self.provinces
    }

    pub fn window(&self) -> StudyWindow {
        self.window
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn province_rows<'a>(
        &'a self,
        province: &'a str,
    ) -> impl Iterator<Item = &'a ObservationRow> + 'a {
        self.rows.iter().filter(move |r| r.province == province)
    }

    /// Sub-panel restricted to the provinces accepted by `keep`.
    pub fn filter_provinces(&self, mut keep: impl FnMut(&str) -> bool) -> Result<Panel> {
        let rows: Vec<_> = self
            .rows
            .iter()
            .filter(|r| keep(&r.province))
            .cloned()
            .collect();
        Panel::from_rows(rows, self.window)
    }
}

#[cfg(test)]
pub(crate) fn test_row(province: &str, date: NaiveDate, cases: u64) -> ObservationRow {
    ObservationRow {
        date,
        province: province.to_string(),
        region: "R".to_string(),
        new_cases: cases,
        new_tests: 100,
        temperature_c: 15.0,
        humidity_pct: 60.0,
        pm25: 40.0,
        mobility_decrease_pct: 10.0,
    }
}
