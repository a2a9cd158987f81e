use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CASES_HEADER: [&str; 5] = ["date", "province", "region", "new_cases", "new_tests"];
pub const ENVIRONMENT_HEADER: [&str; 5] =
    ["date", "province", "temperature_c", "humidity_pct", "pm25"];
pub const MOBILITY_HEADER: [&str; 3] = ["date", "province", "mobility_decrease_pct"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub date: NaiveDate,
    pub province: String,
    pub region: String,
    pub new_cases: u64,
    pub new_tests: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentRecord {
    pub date: NaiveDate,
    pub province: String,
    pub temperature_c: Option<f64>,
    pub humidity_pct: Option<f64>,
    pub pm25: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityRecord {
    pub date: NaiveDate,
    pub province: String,
    pub mobility_decrease_pct: Option<f64>,
}

/// A rejected line or dropped province, written as `line,source,reason`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: u64,
    pub source: String,
    pub reason: String,
}

impl Diagnostic {
    pub fn new(line: u64, source: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            line,
            source: source.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawSources {
    pub cases: Vec<CaseRecord>,
    pub environment: Vec<EnvironmentRecord>,
    pub mobility: Vec<MobilityRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Tokens read as a missing covariate value.
    pub missing_tokens: Vec<String>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            missing_tokens: vec!["".into(), "NA".into(), "NaN".into(), "null".into()],
        }
    }
}

pub fn ingest_sources(
    case_file: &Path,
    environment_file: &Path,
    mobility_file: &Path,
    config: &IngestConfig,
) -> Result<RawSources> {
    let open = |p: &Path| File::open(p).map_err(|e| Error::io(p, e));
    let (cases, mut diagnostics) = parse_cases(open(case_file)?, "cases")?;
    let (environment, env_diag) =
        parse_environment(open(environment_file)?, "environment", config)?;
    let (mobility, mob_diag) = parse_mobility(open(mobility_file)?, "mobility", config)?;
    diagnostics.extend(env_diag);
    diagnostics.extend(mob_diag);
    Ok(RawSources {
        cases,
        environment,
        mobility,
        diagnostics,
    })
}

pub(crate) struct Records<R> {
    reader: csv::Reader<R>,
    source: &'static str,
    width: usize,
}

pub(crate) struct Line {
    pub(crate) record: csv::StringRecord,
    pub(crate) number: u64,
}

impl<R: Read> Records<R> {
    pub(crate) fn open(input: R, source: &'static str, header: &[&str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(input);
        let found = reader
            .headers()
            .map_err(|e| csv_err(source, e))?
            .iter()
            .collect::<Vec<_>>();
        if found != header {
            return Err(Error::HeaderMismatch {
                source_name: source.into(),
                expected: header.join(","),
                found: found.join(","),
            });
        }
        Ok(Self {
            reader,
            source,
            width: header.len(),
        })
    }

    /// Next record with the expected width; malformed lines go to `diagnostics`.
    pub(crate) fn next(&mut self, diagnostics: &mut Vec<Diagnostic>) -> Result<Option<Line>> {
        loop {
            let mut record = csv::StringRecord::new();
            let more = self
                .reader
                .read_record(&mut record)
                .map_err(|e| csv_err(self.source, e))?;
            if !more {
                return Ok(None);
            }
            let number = record.position().map_or(0, |p| p.line());
            if record.len() != self.width {
                diagnostics.push(Diagnostic::new(
                    number,
                    self.source,
                    format!("expected {} fields, found {}", self.width, record.len()),
                ));
                continue;
            }
            return Ok(Some(Line { record, number }));
        }
    }
}

fn csv_err(source: &str, e: csv::Error) -> Error {
    Error::Csv {
        source_name: source.into(),
        message: e.to_string(),
    }
}

impl Line {
    pub(crate) fn parse_err(&self, source: &str, field: &str, value: &str) -> Error {
        Error::Parse {
            source_name: source.into(),
            line: self.number,
            field: field.into(),
            value: value.into(),
        }
    }

    pub(crate) fn date(&self, source: &str) -> Result<NaiveDate> {
        let raw = &self.record[0];
        NaiveDate::parse_from_str(raw, "%Y-%m-%d").map_err(|_| self.parse_err(source, "date", raw))
    }

    pub(crate) fn count(&self, source: &str, idx: usize, field: &str) -> Result<i64> {
        let raw = &self.record[idx];
        raw.parse::<i64>()
            .or_else(|_| {
                // Accept integral floats such as "12.0".
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.fract() == 0.0 && v.abs() < 9.0e15)
                    .map(|v| v as i64)
                    .ok_or(())
            })
            .map_err(|_| self.parse_err(source, field, raw))
    }

    pub(crate) fn number(&self, source: &str, idx: usize, field: &str) -> Result<f64> {
        let raw = &self.record[idx];
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.parse_err(source, field, raw)),
        }
    }

    pub(crate) fn optional(
        &self,
        source: &str,
        idx: usize,
        field: &str,
        config: &IngestConfig,
    ) -> Result<Option<f64>> {
        let raw = &self.record[idx];
        if config.missing_tokens.iter().any(|t| t == raw) {
            return Ok(None);
        }
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(self.parse_err(source, field, raw)),
        }
    }
}

pub fn parse_cases<R: Read>(
    input: R,
    source: &'static str,
) -> Result<(Vec<CaseRecord>, Vec<Diagnostic>)> {
    let mut records = Records::open(input, source, &CASES_HEADER)?;
    let mut diagnostics = Vec::new();
    let mut out = Vec::new();
    while let Some(line) = records.next(&mut diagnostics)? {
        let date = line.date(source)?;
        let cases = line.count(source, 3, "new_cases")?;
        let tests = line.count(source, 4, "new_tests")?;
        if cases < 0 || tests < 0 {
            diagnostics.push(Diagnostic::new(line.number, source, "negative count"));
            continue;
        }
        out.push(CaseRecord {
            date,
            province: line.record[1].to_string(),
            region: line.record[2].to_string(),
            new_cases: cases as u64,
            new_tests: tests as u64,
        });
    }
    Ok((out, diagnostics))
}

pub fn parse_environment<R: Read>(
    input: R,
    source: &'static str,
    config: &IngestConfig,
) -> Result<(Vec<EnvironmentRecord>, Vec<Diagnostic>)> {
    let mut records = Records::open(input, source, &ENVIRONMENT_HEADER)?;
    let mut diagnostics = Vec::new();
    let mut out = Vec::new();
    while let Some(line) = records.next(&mut diagnostics)? {
        let date = line.date(source)?;
        let temperature_c = line.optional(source, 2, "temperature_c", config)?;
        let humidity_pct = line.optional(source, 3, "humidity_pct", config)?;
        let pm25 = line.optional(source, 4, "pm25", config)?;
        if humidity_pct.is_some_and(|h| !(0.0..=100.0).contains(&h)) {
            diagnostics.push(Diagnostic::new(
                line.number,
                source,
                "humidity out of range",
            ));
            continue;
        }
        if pm25.is_some_and(|p| p < 0.0) {
            diagnostics.push(Diagnostic::new(line.number, source, "pm25 out of range"));
            continue;
        }
        out.push(EnvironmentRecord {
            date,
            province: line.record[1].to_string(),
            temperature_c,
            humidity_pct,
            pm25,
        });
    }
    Ok((out, diagnostics))
}

pub fn parse_mobility<R: Read>(
    input: R,
    source: &'static str,
    config: &IngestConfig,
) -> Result<(Vec<MobilityRecord>, Vec<Diagnostic>)> {
    let mut records = Records::open(input, source, &MOBILITY_HEADER)?;
    let mut diagnostics = Vec::new();
    let mut out = Vec::new();
    while let Some(line) = records.next(&mut diagnostics)? {
        let date = line.date(source)?;
        let mobility = line.optional(source, 2, "mobility_decrease_pct", config)?;
        if mobility.is_some_and(|m| !(-100.0..=100.0).contains(&m)) {
            diagnostics.push(Diagnostic::new(
                line.number,
                source,
                "mobility change out of range",
            ));
            continue;
        }
        out.push(MobilityRecord {
            date,
            province: line.record[1].to_string(),
            mobility_decrease_pct: mobility,
        });
    }
    Ok((out, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_line_case_file() {
        let text = "date,province,region,new_cases,new_tests\n\
                    2020-03-01,Milano,Lombardia,10,100\n\
                    2020-03-02,Milano,Lombardia,12,110\n\
                    2020-03-03,Milano,Lombardia,0,0\n";
        let (rows, diag) = parse_cases(text.as_bytes(), "cases").unwrap();
        assert_eq!(rows.len(), 3);
        assert!(diag.is_empty());
        assert_eq!(rows[1].new_cases, 12);
        assert_eq!(rows[2].new_tests, 0);
    }

    #[test]
    fn humidity_over_100_rejected() {
        let text = "date,province,temperature_c,humidity_pct,pm25\n\
                    2020-03-01,Milano,10.5,101,40\n\
                    2020-03-02,Milano,10.5,99,40\n";
        let (rows, diag) =
            parse_environment(text.as_bytes(), "environment", &IngestConfig::default()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(diag.len(), 1);
        assert_eq!(diag[0].reason, "humidity out of range");
        assert_eq!(diag[0].line, 2);
    }

    #[test]
    fn negative_mobility_accepted() {
        let text = "date,province,mobility_decrease_pct\n2020-07-01,Roma,-9\n";
        let (rows, diag) =
            parse_mobility(text.as_bytes(), "mobility", &IngestConfig::default()).unwrap();
        assert!(diag.is_empty());
        assert_eq!(rows[0].mobility_decrease_pct, Some(-9.0));
    }

    #[test]
    fn header_mismatch_is_error() {
        let text = "date,province,cases,tests,region\n";
        let err = parse_cases(text.as_bytes(), "cases").unwrap_err();
        assert!(matches!(err, Error::HeaderMismatch { .. }));
    }

    #[test]
    fn bad_number_reports_line() {
        let text = "date,province,region,new_cases,new_tests\n\
                    2020-03-01,Milano,Lombardia,10,100\n\
                    2020-03-02,Milano,Lombardia,ten,100\n";
        match parse_cases(text.as_bytes(), "cases").unwrap_err() {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 3);
                assert_eq!(field, "new_cases");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_line_goes_to_diagnostics() {
        let text = "date,province,region,new_cases,new_tests\n\
                    2020-03-01,Milano,Lombardia,10\n";
        let (rows, diag) = parse_cases(text.as_bytes(), "cases").unwrap();
        assert!(rows.is_empty());
        assert_eq!(diag.len(), 1);
    }

    #[test]
    fn missing_tokens_are_none() {
        let text = "date,province,temperature_c,humidity_pct,pm25\n\
                    2020-03-01,Milano,,NA,40\n";
        let (rows, _) =
            parse_environment(text.as_bytes(), "environment", &IngestConfig::default()).unwrap();
        assert_eq!(rows[0].temperature_c, None);
        assert_eq!(rows[0].humidity_pct, None);
        assert_eq!(rows[0].pm25, Some(40.0));
    }
}
