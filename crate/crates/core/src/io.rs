//! Delimited-text outputs, run manifests and atomic file writes.
//!
//! Every CSV written here starts with a `# manifest: <file>` comment naming
//! the manifest of the run that produced it. Readers skip `#` lines.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::effects::{CvReport, PartialEffect};
use crate::error::{Error, Result};
use crate::gam::FittedGam;
use crate::panel::{
    CaseRecord, Diagnostic, EnvironmentRecord, MobilityRecord, ObservationRow, Panel, Records,
    StudyWindow, SummaryTable, CASES_HEADER, ENVIRONMENT_HEADER, MOBILITY_HEADER,
};
use crate::rt::{RtDay, RtSeries};
use crate::synth::TruthRow;

pub const PANEL_HEADER: [&str; 9] = [
    "date",
    "province",
    "region",
    "new_cases",
    "new_tests",
    "temperature_c",
    "humidity_pct",
    "pm25",
    "mobility_decrease_pct",
];
pub const RT_HEADER: [&str; 4] = ["date", "province", "rt", "flag"];
pub const EFFECT_HEADER: [&str; 5] = ["grid", "effect", "se", "lo", "hi"];
pub const CV_HEADER: [&str; 3] = ["province", "mse", "n"];
pub const DIAGNOSTIC_HEADER: [&str; 3] = ["line", "source", "reason"];
pub const SUMMARY_HEADER: [&str; 6] = ["variable", "n", "mean", "sd", "min", "max"];
pub const TRUTH_HEADER: [&str; 10] = [
    "date",
    "province",
    "log_rt",
    "intercept",
    "f_mobility",
    "f_temperature",
    "f_humidity",
    "f_pm25",
    "noise",
    "rt",
];

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Writes to a temporary sibling, then renames over `path`.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(contents)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Record of what produced a set of outputs. Contains no timestamps, so
/// identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Input path (as given) to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config_json: &str, inputs: &[&Path]) -> Result<Self> {
        let mut hashes = BTreeMap::new();
        for path in inputs {
            hashes.insert(path.display().to_string(), sha256_file(path)?);
        }
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            inputs: hashes,
            config_sha256: sha256_hex(config_json.as_bytes()),
            config: serde_json::from_str(config_json).map_err(|e| Error::Serde(e.to_string()))?,
            outputs: Vec::new(),
        })
    }

    pub fn file_name(&self) -> String {
        format!("{}.manifest.json", self.command)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Collects outputs for one run and writes them, each tagged with the
/// manifest name, followed by the manifest itself.
pub struct OutputSet {
    dir: PathBuf,
    manifest: Manifest,
}

impl OutputSet {
    pub fn new(dir: impl Into<PathBuf>, manifest: Manifest) -> Self {
        Self {
            dir: dir.into(),
            manifest,
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes a CSV body (header included) under `relative`, prefixed with
    /// the manifest line.
    pub fn csv(&mut self, relative: &str, body: &str) -> Result<PathBuf> {
        self.text(relative, body)
    }

    /// Any line-oriented text; same `# manifest:` first line as CSV outputs.
    pub fn text(&mut self, relative: &str, body: &str) -> Result<PathBuf> {
        let text = format!("# manifest: {}\n{body}", self.manifest.file_name());
        self.raw(relative, text.as_bytes())
    }

    /// Fitted model as `{"manifest": ..., "model": ...}`.
    pub fn model(&mut self, relative: &str, model: &FittedGam) -> Result<PathBuf> {
        let wrapped = serde_json::json!({
            "manifest": self.manifest.file_name(),
            "model": model,
        });
        let text =
            serde_json::to_string_pretty(&wrapped).map_err(|e| Error::Serde(e.to_string()))?;
        self.raw(relative, format!("{text}\n").as_bytes())
    }

    /// Writes a non-CSV file verbatim.
    pub fn raw(&mut self, relative: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(relative);
        atomic_write(&path, bytes)?;
        self.manifest.outputs.push(relative.to_string());
        Ok(path)
    }

    pub fn finish(self) -> Result<Manifest> {
        let path = self.dir.join(self.manifest.file_name());
        atomic_write(&path, self.manifest.to_json()?.as_bytes())?;
        Ok(self.manifest)
    }
}

fn csv_body<I, R>(header: &[&str], rows: I) -> Result<String>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut writer = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Csv {
        source_name: "output".into(),
        message: e.to_string(),
    };
    writer.write_record(header).map_err(err)?;
    for row in rows {
        writer.write_record(row).map_err(err)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn panel_csv(panel: &Panel) -> Result<String> {
    csv_body(
        &PANEL_HEADER,
        panel.rows().iter().map(|r| {
            vec![
                r.date.to_string(),
                r.province.clone(),
                r.region.clone(),
                r.new_cases.to_string(),
                r.new_tests.to_string(),
                r.temperature_c.to_string(),
                r.humidity_pct.to_string(),
                r.pm25.to_string(),
                r.mobility_decrease_pct.to_string(),
            ]
        }),
    )
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn strict<R: std::io::Read>(records: &mut Records<R>) -> Result<Option<crate::panel::Line>> {
    let mut diagnostics = Vec::new();
    let line = records.next(&mut diagnostics)?;
    if let Some(d) = diagnostics.first() {
        return Err(Error::Csv {
            source_name: d.source.clone(),
            message: format!("line {}: {}", d.line, d.reason),
        });
    }
    Ok(line)
}

/// Reads a panel file written by [`panel_csv`].
pub fn parse_panel(input: &[u8], window: StudyWindow) -> Result<Panel> {
    const SOURCE: &str = "panel";
    let mut records = Records::open(input, SOURCE, &PANEL_HEADER)?;
    let mut rows = Vec::new();
    while let Some(line) = strict(&mut records)? {
        let count = |idx: usize, field: &str| -> Result<u64> {
            let v = line.count(SOURCE, idx, field)?;
            u64::try_from(v).map_err(|_| line.parse_err(SOURCE, field, &line.record[idx]))
        };
        rows.push(ObservationRow {
            date: line.date(SOURCE)?,
            province: line.record[1].to_string(),
            region: line.record[2].to_string(),
            new_cases: count(3, "new_cases")?,
            new_tests: count(4, "new_tests")?,
            temperature_c: line.number(SOURCE, 5, "temperature_c")?,
            humidity_pct: line.number(SOURCE, 6, "humidity_pct")?,
            pm25: line.number(SOURCE, 7, "pm25")?,
            mobility_decrease_pct: line.number(SOURCE, 8, "mobility_decrease_pct")?,
        });
    }
    Panel::from_rows(rows, window)
}

pub fn read_panel(path: &Path, window: StudyWindow) -> Result<Panel> {
    parse_panel(&read_all(path)?, window)
}

/// Reads a model written by [`OutputSet::model`] or a bare
/// [`FittedGam::to_json`] document.
pub fn parse_model(text: &str) -> Result<FittedGam> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
    if let Some(inner) = value.get_mut("model") {
        value = inner.take();
    }
    serde_json::from_value(value).map_err(|e| Error::Serde(e.to_string()))
}

pub fn read_model(path: &Path) -> Result<FittedGam> {
    let bytes = read_all(path)?;
    parse_model(&String::from_utf8_lossy(&bytes))
}

pub fn rt_csv(series: &[RtSeries]) -> Result<String> {
    csv_body(
        &RT_HEADER,
        series.iter().flat_map(|s| {
            s.days.iter().map(|d| {
                vec![
                    d.date.to_string(),
                    s.province.clone(),
                    opt(d.rt),
                    d.flags.to_string(),
                ]
            })
        }),
    )
}

/// Reads an R_t file; provinces keep first-appearance order, days are sorted.
pub fn parse_rt(input: &[u8]) -> Result<Vec<RtSeries>> {
    const SOURCE: &str = "rt";
    let mut records = Records::open(input, SOURCE, &RT_HEADER)?;
    let mut order: Vec<String> = Vec::new();
    let mut days: BTreeMap<String, Vec<RtDay>> = BTreeMap::new();
    while let Some(line) = strict(&mut records)? {
        let province = line.record[1].to_string();
        let rt = match &line.record[2] {
            "" => None,
            _ => Some(line.number(SOURCE, 2, "rt")?),
        };
        let flags = line.record[3]
            .parse()
            .map_err(|_| line.parse_err(SOURCE, "flag", &line.record[3]))?;
        if !days.contains_key(&province) {
            order.push(province.clone());
        }
        days.entry(province).or_default().push(RtDay {
            date: line.date(SOURCE)?,
            rt,
            adjusted_incidence: None,
            flags,
        });
    }
    Ok(order
        .into_iter()
        .map(|province| {
            let mut d = days.remove(&province).unwrap_or_default();
            d.sort_by_key(|day| day.date);
            RtSeries {
                province,
                days: d,
                config: None,
            }
        })
        .collect())
}

pub fn read_rt(path: &Path) -> Result<Vec<RtSeries>> {
    parse_rt(&read_all(path)?)
}

pub fn effect_csv(effect: &PartialEffect) -> Result<String> {
    csv_body(
        &EFFECT_HEADER,
        effect.points.iter().map(|p| {
            [p.x, p.effect, p.se, p.lo, p.hi]
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
        }),
    )
}

/// Several terms in one file, with a leading `term` column.
pub fn effects_table_csv(effects: &[PartialEffect]) -> Result<String> {
    let mut header = vec!["term"];
    header.extend(EFFECT_HEADER);
    csv_body(
        &header,
        effects.iter().flat_map(|e| {
            e.points.iter().map(|p| {
                std::iter::once(e.term.clone())
                    .chain([p.x, p.effect, p.se, p.lo, p.hi].iter().map(f64::to_string))
                    .collect::<Vec<_>>()
            })
        }),
    )
}

pub fn cv_csv(report: &CvReport) -> Result<String> {
    csv_body(
        &CV_HEADER,
        report
            .folds
            .iter()
            .map(|f| vec![f.province.clone(), opt(f.mse), f.n.to_string()]),
    )
}

pub fn diagnostics_csv(diagnostics: &[Diagnostic]) -> Result<String> {
    csv_body(
        &DIAGNOSTIC_HEADER,
        diagnostics
            .iter()
            .map(|d| vec![d.line.to_string(), d.source.clone(), d.reason.clone()]),
    )
}

pub fn summary_csv(table: &SummaryTable) -> Result<String> {
    csv_body(
        &SUMMARY_HEADER,
        table.rows.iter().map(|r| {
            vec![
                r.variable.clone(),
                r.n.to_string(),
                r.mean.to_string(),
                r.sd.to_string(),
                r.min.to_string(),
                r.max.to_string(),
            ]
        }),
    )
}

pub fn cases_csv(records: &[CaseRecord]) -> Result<String> {
    csv_body(
        &CASES_HEADER,
        records.iter().map(|r| {
            vec![
                r.date.to_string(),
                r.province.clone(),
                r.region.clone(),
                r.new_cases.to_string(),
                r.new_tests.to_string(),
            ]
        }),
    )
}

pub fn environment_csv(records: &[EnvironmentRecord]) -> Result<String> {
    csv_body(
        &ENVIRONMENT_HEADER,
        records.iter().map(|r| {
            vec![
                r.date.to_string(),
                r.province.clone(),
                opt(r.temperature_c),
                opt(r.humidity_pct),
                opt(r.pm25),
            ]
        }),
    )
}

pub fn mobility_csv(records: &[MobilityRecord]) -> Result<String> {
    csv_body(
        &MOBILITY_HEADER,
        records.iter().map(|r| {
            vec![
                r.date.to_string(),
                r.province.clone(),
                opt(r.mobility_decrease_pct),
            ]
        }),
    )
}

pub fn truth_csv(truth: &[TruthRow]) -> Result<String> {
    csv_body(
        &TRUTH_HEADER,
        truth.iter().map(|t| {
            let mut row = vec![
                t.date.to_string(),
                t.province.clone(),
                t.log_rt.to_string(),
                t.intercept.to_string(),
            ];
            row.extend(t.contributions.iter().map(f64::to_string));
            row.push(t.noise.to_string());
            row.push(t.log_rt.exp().to_string());
            row
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rt::DayFlags;
    use crate::synth::{simulate_panel, ScenarioSpec};

    fn small() -> crate::synth::SyntheticPanel {
        simulate_panel(&ScenarioSpec {
            provinces: 3,
            days: 40,
            ..ScenarioSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn panel_round_trip_is_exact() {
        let sim = small();
        let text = panel_csv(&sim.panel).unwrap();
        let tagged = format!("# manifest: x.manifest.json\n{text}");
        let back = parse_panel(tagged.as_bytes(), sim.panel.window()).unwrap();
        assert_eq!(back, sim.panel);
    }

    #[test]
    fn rt_round_trip_keeps_flags_and_missing() {
        let mut series = small().true_rt;
        series[0].days[0].rt = None;
        series[0].days[0].flags = DayFlags {
            undefined: true,
            ..DayFlags::default()
        };
        series[1].days[3].flags = DayFlags {
            clipped: true,
            test_floor: true,
            ..DayFlags::default()
        };
        let back = parse_rt(rt_csv(&series).unwrap().as_bytes()).unwrap();
        assert_eq!(back.len(), series.len());
        for (a, b) in back.iter().zip(&series) {
            assert_eq!(a.province, b.province);
            for (x, y) in a.days.iter().zip(&b.days) {
                assert_eq!((x.date, x.rt, x.flags), (y.date, y.rt, y.flags));
            }
        }
    }

    #[test]
    fn rt_reader_rejects_bad_flag_with_line() {
        let text = "date,province,rt,flag\n2020-03-01,A,1.0,ok\n2020-03-02,A,1.0,weird\n";
        let err = parse_rt(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn panel_reader_rejects_short_line() {
        let text = format!("{}\n2020-03-01,A,R\n", PANEL_HEADER.join(","));
        assert!(parse_panel(text.as_bytes(), StudyWindow::default()).is_err());
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/out.csv");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        let entries: Vec<_> = fs::read_dir(dir.path().join("sub")).unwrap().collect();
        assert_eq!(entries.len(), 1);
    }

    #[test]
    fn output_set_tags_files_and_lists_them() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        fs::write(&input, "abc").unwrap();
        let manifest = Manifest::new("demo", "{\"a\":1}", &[&input]).unwrap();
        assert_eq!(
            manifest.inputs.values().next().unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let mut out = OutputSet::new(dir.path().join("o"), manifest);
        let path = out.csv("x.csv", "a,b\n1,2\n").unwrap();
        let manifest = out.finish().unwrap();
        let text = fs::read_to_string(path).unwrap();
        assert!(text.starts_with("# manifest: demo.manifest.json\n"));
        assert_eq!(manifest.outputs, ["x.csv"]);
        assert!(dir.path().join("o/demo.manifest.json").exists());
    }

    #[test]
    fn source_files_round_trip_through_ingest() {
        use crate::panel::{parse_cases, parse_environment, parse_mobility, IngestConfig};
        let sim = simulate_panel(&ScenarioSpec {
            provinces: 2,
            days: 40,
            ..ScenarioSpec::default()
        })
        .unwrap();
        let src = &sim.sources;
        let cfg = IngestConfig::default();
        let tag = |body: String| format!("# manifest: simulate.manifest.json\n{body}");
        let (cases, d1) =
            parse_cases(tag(cases_csv(&src.cases).unwrap()).as_bytes(), "cases").unwrap();
        let (env, d2) = parse_environment(
            tag(environment_csv(&src.environment).unwrap()).as_bytes(),
            "environment",
            &cfg,
        )
        .unwrap();
        let (mob, d3) = parse_mobility(
            tag(mobility_csv(&src.mobility).unwrap()).as_bytes(),
            "mobility",
            &cfg,
        )
        .unwrap();
        assert!(d1.is_empty() && d2.is_empty() && d3.is_empty());
        assert_eq!(cases, src.cases);
        assert_eq!(env, src.environment);
        assert_eq!(mob, src.mobility);
    }

    #[test]
    fn model_file_names_manifest_and_reads_back() {
        use crate::gam::{fit_gam, ModelSpec};
        let sim = simulate_panel(&ScenarioSpec {
            provinces: 3,
            days: 90,
            ..ScenarioSpec::default()
        })
        .unwrap();
        let model = fit_gam(&sim.panel, &sim.true_rt, &ModelSpec::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = Manifest::new("fit", "{}", &[]).unwrap();
        let mut out = OutputSet::new(dir.path(), manifest);
        let path = out.model("model.json", &model).unwrap();
        out.finish().unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["manifest"], "fit.manifest.json");
        let back = read_model(&path).unwrap();
        assert_eq!(back.coefficients, model.coefficients);
        assert_eq!(
            parse_model(&model.to_json().unwrap()).unwrap().terms,
            model.terms
        );
    }
}
