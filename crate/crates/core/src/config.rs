//! Plain-text run configuration: `section.key = value` lines, `#` comments.
//!
//! Every key has a default, so an empty file is valid. The same keys can be
//! applied one at a time with [`RunConfig::set`] to layer flag overrides on
//! top of a file.

use std::path::PathBuf;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gam::ModelSpec;
use crate::panel::{IngestConfig, PanelConfig, StudyWindow};
use crate::rt::{DelayModel, RtConfig};
use crate::synth::{ScenarioSpec, TestVolume};

/// Settings for `simulate`; the generation interval, delay and seed are
/// shared with the estimator and run sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub provinces: usize,
    pub days: usize,
    pub noise_sd: f64,
    pub level_mean: f64,
    pub level_sd: f64,
    pub tests: TestVolume,
    pub seed_cases: f64,
    pub burn_in: usize,
    pub exchangeable: bool,
    /// Replace the lognormal reporting delay with a point mass at the
    /// incubation period.
    pub point_delay: bool,
}

impl Default for SimSettings {
    fn default() -> Self {
        let s = ScenarioSpec::default();
        Self {
            provinces: s.provinces,
            days: s.days,
            noise_sd: s.noise_sd,
            level_mean: s.level_mean,
            level_sd: s.level_sd,
            tests: s.test_volume,
            seed_cases: s.seed_cases,
            burn_in: s.burn_in,
            exchangeable: s.exchangeable,
            point_delay: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub cases: Option<PathBuf>,
    pub environment: Option<PathBuf>,
    pub mobility: Option<PathBuf>,
    pub out: PathBuf,
    /// Worker threads; `None` uses every processor.
    pub jobs: Option<usize>,
    pub seed: u64,
    pub ingest: IngestConfig,
    pub panel: PanelConfig,
    pub rt: RtConfig,
    pub model: ModelSpec,
    pub grid_size: usize,
    pub sim: SimSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cases: None,
            environment: None,
            mobility: None,
            out: PathBuf::from("out"),
            jobs: None,
            seed: 1,
            ingest: IngestConfig::default(),
            panel: PanelConfig::default(),
            rt: RtConfig::default(),
            model: ModelSpec::default(),
            grid_size: crate::effects::DEFAULT_GRID_SIZE,
            sim: SimSettings::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "input.cases",
    "input.environment",
    "input.mobility",
    "input.missing",
    "run.out",
    "run.jobs",
    "run.seed",
    "panel.threshold",
    "panel.start",
    "panel.end",
    "panel.max_missing_frac",
    "panel.max_interp_gap",
    "gi.mean",
    "gi.sd",
    "gi.max_lag",
    "delay.incubation",
    "delay.mean",
    "delay.sd",
    "delay.max",
    "rt.half_width",
    "rt.test_floor",
    "model.k",
    "model.lambda_min",
    "model.lambda_max",
    "model.lambda_points",
    "model.sweeps",
    "effects.grid_size",
    "sim.provinces",
    "sim.days",
    "sim.noise_sd",
    "sim.level_mean",
    "sim.level_sd",
    "sim.tests",
    "sim.seed_cases",
    "sim.burn_in",
    "sim.exchangeable",
    "sim.point_delay",
];

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: cannot parse '{value}'"))
}

fn parse_date(key: &str, value: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(value, "%Y-%m-%d")
        .map_err(|_| format!("{key}: expected YYYY-MM-DD, got '{value}'"))
}

fn parse_tests(value: &str) -> std::result::Result<TestVolume, String> {
    let (kind, n) = value
        .split_once(':')
        .ok_or_else(|| format!("sim.tests: expected constant:N or weekly:N, got '{value}'"))?;
    let n: u64 = parse("sim.tests", n.trim())?;
    match kind.trim() {
        "constant" => Ok(TestVolume::Constant(n)),
        "weekly" => Ok(TestVolume::Weekly(n)),
        other => Err(format!("sim.tests: unknown volume '{other}'")),
    }
}

impl RunConfig {
    /// Parses a configuration file's contents over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            config
                .apply(key.trim(), value.trim())
                .map_err(|message| Error::Config {
                    line: i + 1,
                    message,
                })?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies one override; errors carry line 0.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.apply(key, value)
            .map_err(|message| Error::Config { line: 0, message })
    }

    fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "input.cases" => self.cases = Some(value.into()),
            "input.environment" => self.environment = Some(value.into()),
            "input.mobility" => self.mobility = Some(value.into()),
            "input.missing" => {
                self.ingest.missing_tokens =
                    value.split(',').map(|t| t.trim().to_string()).collect()
            }
            "run.out" => self.out = value.into(),
            "run.jobs" => {
                let jobs: usize = parse(key, value)?;
                self.jobs = (jobs > 0).then_some(jobs);
            }
            "run.seed" => self.seed = parse(key, value)?,
            "panel.threshold" => self.panel.case_threshold = parse(key, value)?,
            "panel.start" => self.panel.window.start = parse_date(key, value)?,
            "panel.end" => self.panel.window.end = parse_date(key, value)?,
            "panel.max_missing_frac" => self.panel.max_missing_frac = parse(key, value)?,
            "panel.max_interp_gap" => self.panel.max_interp_gap = parse(key, value)?,
            "gi.mean" => self.rt.gi_mean = parse(key, value)?,
            "gi.sd" => self.rt.gi_sd = parse(key, value)?,
            "gi.max_lag" => self.rt.gi_max_lag = parse(key, value)?,
            "delay.incubation" => self.rt.incubation_days = parse(key, value)?,
            "delay.mean" => self.rt.delay_mean = parse(key, value)?,
            "delay.sd" => self.rt.delay_sd = parse(key, value)?,
            "delay.max" => self.rt.delay_max = parse(key, value)?,
            "rt.half_width" => self.rt.half_width = parse(key, value)?,
            "rt.test_floor" => {
                self.rt.test_floor = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "model.k" => {
                let k: usize = parse(key, value)?;
                for s in &mut self.model.smooths {
                    s.basis_dim = k;
                }
            }
            "model.lambda_min" => self.model.grid.min = parse(key, value)?,
            "model.lambda_max" => self.model.grid.max = parse(key, value)?,
            "model.lambda_points" => self.model.grid.points = parse(key, value)?,
            "model.sweeps" => self.model.sweeps = parse(key, value)?,
            "effects.grid_size" => self.grid_size = parse(key, value)?,
            "sim.provinces" => self.sim.provinces = parse(key, value)?,
            "sim.days" => self.sim.days = parse(key, value)?,
            "sim.noise_sd" => self.sim.noise_sd = parse(key, value)?,
            "sim.level_mean" => self.sim.level_mean = parse(key, value)?,
            "sim.level_sd" => self.sim.level_sd = parse(key, value)?,
            "sim.tests" => self.sim.tests = parse_tests(value)?,
            "sim.seed_cases" => self.sim.seed_cases = parse(key, value)?,
            "sim.burn_in" => self.sim.burn_in = parse(key, value)?,
            "sim.exchangeable" => self.sim.exchangeable = parse(key, value)?,
            "sim.point_delay" => self.sim.point_delay = parse(key, value)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Cross-field checks that single keys cannot make.
    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Err(Error::Config { line: 0, message });
        if self.panel.window.start > self.panel.window.end {
            return bad("panel.start is after panel.end".into());
        }
        if !(0.0..=1.0).contains(&self.panel.max_missing_frac) {
            return bad("panel.max_missing_frac must be in [0, 1]".into());
        }
        if self.grid_size < 2 {
            return bad("effects.grid_size must be at least 2".into());
        }
        if let Err(e) = self.model.validate() {
            return bad(e.to_string());
        }
        Ok(())
    }

    pub fn window(&self) -> StudyWindow {
        self.panel.window
    }

    /// Scenario for `simulate`, starting at the configured window start.
    pub fn scenario(&self) -> Result<ScenarioSpec> {
        let delay = if self.sim.point_delay {
            DelayModel::point_mass(self.rt.incubation_days)
        } else {
            self.rt.delay_model()?
        };
        Ok(ScenarioSpec {
            provinces: self.sim.provinces,
            days: self.sim.days,
            start: self.panel.window.start,
            noise_sd: self.sim.noise_sd,
            level_mean: self.sim.level_mean,
            level_sd: self.sim.level_sd,
            seed: self.seed,
            gi: self.rt.generation_interval()?,
            delay,
            test_volume: self.sim.tests.clone(),
            seed_cases: self.sim.seed_cases,
            burn_in: self.sim.burn_in,
            exchangeable: self.sim.exchangeable,
            ..ScenarioSpec::default()
        })
    }

    /// Stable text form used for manifest hashing.
    pub fn canonical_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }
}
