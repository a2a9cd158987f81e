use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rtgam::config::RunConfig;
use rtgam::effects::{fit_per_province, lopo_cv, partial_effects};
use rtgam::gam::{fit_gam, FittedGam};
use rtgam::io::{self, Manifest, OutputSet};
use rtgam::panel::{build_panel, ingest_sources, summarize_panel, Diagnostic, Panel};
use rtgam::rt::{estimate_panel_rt, RtSeries};
use rtgam::synth::simulate_panel;
use rtgam::{Error, Result};

/// Rt estimation and additive modelling of ln Rt on mobility and environment.
#[derive(Debug, Parser)]
#[command(name = "rtgam", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Key-value config file (`section.key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for parallel fits.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Seed for simulation.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Join the three source files into a filtered daily panel.
    Ingest {
        #[arg(long)]
        cases: Option<PathBuf>,
        #[arg(long)]
        environment: Option<PathBuf>,
        #[arg(long)]
        mobility: Option<PathBuf>,
    },
    /// Estimate daily Rt per province from a panel.
    Rt {
        #[arg(long)]
        panel: PathBuf,
    },
    /// Fit the additive model of ln Rt.
    Fit(PanelRt),
    /// Partial-effect curves with 95% bands from a fitted model.
    Effects {
        #[arg(long)]
        model: PathBuf,
    },
    /// Leave-one-province-out cross-validation.
    Cv(PanelRt),
    /// Refit the model on each province alone and write its effect curves.
    PerProvince(PanelRt),
    /// Write synthetic source files with known ground truth.
    Simulate,
    /// Descriptive statistics of the panel covariates and Rt.
    Summary {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        rt: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct PanelRt {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    rt: PathBuf,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Rt { .. } => "rt",
            Command::Fit(_) => "fit",
            Command::Effects { .. } => "effects",
            Command::Cv(_) => "cv",
            Command::PerProvince(_) => "per-province",
            Command::Simulate => "simulate",
            Command::Summary { .. } => "summary",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", e.kind());
            ExitCode::FAILURE
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        config.out = out.clone();
    }
    if let Some(jobs) = common.jobs {
        config.set("run.jobs", &jobs.to_string())?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli.common)?;
    if let Some(jobs) = config.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    let command = cli.command.name();
    match cli.command {
        Command::Ingest {
            cases,
            environment,
            mobility,
        } => {
            config.cases = cases.or(config.cases);
            config.environment = environment.or(config.environment);
            config.mobility = mobility.or(config.mobility);
            ingest(&config)
        }
        Command::Rt { panel } => rt(&config, &panel),
        Command::Fit(args) => fit(&config, &args),
        Command::Effects { model } => effects(&config, &model),
        Command::Cv(args) => cv(&config, &args),
        Command::PerProvince(args) => per_province(&config, &args),
        Command::Simulate => simulate(&config),
        Command::Summary { panel, rt } => summary(&config, &panel, rt.as_deref()),
    }
    .map(|files| println!("{command}: wrote {files} files to {}", config.out.display()))
}

fn outputs(config: &RunConfig, command: &str, inputs: &[&Path]) -> Result<OutputSet> {
    let manifest = Manifest::new(command, &config.canonical_json()?, inputs)?;
    Ok(OutputSet::new(&config.out, manifest))
}

fn finish(out: OutputSet) -> Result<usize> {
    Ok(out.finish()?.outputs.len() + 1)
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str, flag: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| {
        Error::InvalidParameter(format!(
            "missing input: pass --{flag} or set {key} in the config"
        ))
    })
}

fn ingest(config: &RunConfig) -> Result<usize> {
    let cases = required(&config.cases, "input.cases", "cases")?;
    let environment = required(&config.environment, "input.environment", "environment")?;
    let mobility = required(&config.mobility, "input.mobility", "mobility")?;
    let raw = ingest_sources(cases, environment, mobility, &config.ingest)?;
    let (panel, mut diagnostics) = build_panel(&raw, &config.panel)?;
    diagnostics.splice(0..0, raw.diagnostics.iter().cloned());
    let mut out = outputs(config, "ingest", &[cases, environment, mobility])?;
    out.csv("panel.csv", &io::panel_csv(&panel)?)?;
    out.csv("diagnostics.csv", &io::diagnostics_csv(&diagnostics)?)?;
    finish(out)
}

fn load_panel_rt(config: &RunConfig, args: &PanelRt) -> Result<(Panel, Vec<RtSeries>)> {
    Ok((
        io::read_panel(&args.panel, config.window())?,
        io::read_rt(&args.rt)?,
    ))
}

fn rt(config: &RunConfig, panel_path: &Path) -> Result<usize> {
    let panel = io::read_panel(panel_path, config.window())?;
    let (series, diagnostics) = estimate_panel_rt(&panel, &config.rt)?;
    let mut out = outputs(config, "rt", &[panel_path])?;
    out.csv("rt.csv", &io::rt_csv(&series)?)?;
    out.csv("diagnostics.csv", &io::diagnostics_csv(&diagnostics)?)?;
    finish(out)
}

fn fit(config: &RunConfig, args: &PanelRt) -> Result<usize> {
    let (panel, series) = load_panel_rt(config, args)?;
    let model = fit_gam(&panel, &series, &config.model)?;
    let mut out = outputs(config, "fit", &[&args.panel, &args.rt])?;
    out.model("model.json", &model)?;
    out.text("fit_summary.txt", &fit_summary(&model))?;
    finish(out)
}

fn fit_summary(model: &FittedGam) -> String {
    let mut text = String::new();
    let mut line = |s: String| {
        text.push_str(&s);
        text.push('\n');
    };
    line("ln Rt ~ province + s(mobility) + s(temperature) + s(humidity) + s(pm25)".into());
    line(format!(
        "n = {}  excluded rows = {}  provinces = {}",
        model.n,
        model.excluded_rows,
        model.groups.len()
    ));
    line(format!(
        "R2 = {:.4}  adjusted R2 = {:.4}  GCV = {:.6}  sigma2 = {:.6}  total EDF = {:.3}",
        model.r2, model.adjusted_r2, model.gcv_score, model.sigma2, model.total_edf
    ));
    line(String::new());
    line(format!(
        "{:<12} {:>10} {:>8} {:>10} {:>12} {:>10}",
        "term", "lambda", "edf", "edf+lin", "wald", "p"
    ));
    for term in &model.terms {
        line(format!(
            "{:<12} {:>10.3e} {:>8.3} {:>10.3} {:>12.3} {:>10.3e}",
            term.name(),
            term.lambda,
            term.edf,
            term.total_edf(),
            term.wald_statistic,
            term.p_value
        ));
    }
    text
}

fn effects(config: &RunConfig, model_path: &Path) -> Result<usize> {
    let model = io::read_model(model_path)?;
    let mut out = outputs(config, "effects", &[model_path])?;
    for term in &model.terms {
        let effect = partial_effects(&model, term.name(), config.grid_size)?;
        out.csv(
            &format!("effects/{}.csv", term.name()),
            &io::effect_csv(&effect)?,
        )?;
    }
    finish(out)
}

fn cv(config: &RunConfig, args: &PanelRt) -> Result<usize> {
    let (panel, series) = load_panel_rt(config, args)?;
    let report = lopo_cv(&panel, &series, &config.model)?;
    let failures: Vec<Diagnostic> = report
        .failed()
        .map(|f| {
            Diagnostic::new(
                0,
                "cv",
                format!("{}: {}", f.province, f.error.as_deref().unwrap_or("")),
            )
        })
        .collect();
    let mut out = outputs(config, "cv", &[&args.panel, &args.rt])?;
    out.csv("cv.csv", &io::cv_csv(&report)?)?;
    out.csv("diagnostics.csv", &io::diagnostics_csv(&failures)?)?;
    println!(
        "cv: mean MSE {:.6} over {} folds",
        report.mean_mse,
        report.folds.len()
    );
    finish(out)
}

fn per_province(config: &RunConfig, args: &PanelRt) -> Result<usize> {
    let (panel, series) = load_panel_rt(config, args)?;
    let (fits, diagnostics) = fit_per_province(&panel, &series, &config.model)?;
    let mut out = outputs(config, "per-province", &[&args.panel, &args.rt])?;
    for fit in &fits {
        let curves = fit
            .model
            .terms
            .iter()
            .map(|t| partial_effects(&fit.model, t.name(), config.grid_size))
            .collect::<Result<Vec<_>>>()?;
        out.csv(
            &format!("per_province/{}.csv", fit.province),
            &io::effects_table_csv(&curves)?,
        )?;
    }
    out.csv("diagnostics.csv", &io::diagnostics_csv(&diagnostics)?)?;
    finish(out)
}

fn simulate(config: &RunConfig) -> Result<usize> {
    let sim = simulate_panel(&config.scenario()?)?;
    let mut out = outputs(config, "simulate", &[])?;
    out.csv("cases.csv", &io::cases_csv(&sim.sources.cases)?)?;
    out.csv(
        "environment.csv",
        &io::environment_csv(&sim.sources.environment)?,
    )?;
    out.csv("mobility.csv", &io::mobility_csv(&sim.sources.mobility)?)?;
    out.csv("truth.csv", &io::truth_csv(&sim.truth)?)?;
    finish(out)
}

fn summary(config: &RunConfig, panel_path: &Path, rt_path: Option<&Path>) -> Result<usize> {
    let panel = io::read_panel(panel_path, config.window())?;
    let series = rt_path.map(io::read_rt).transpose()?;
    let table = summarize_panel(&panel, series.as_deref())?;
    let mut inputs = vec![panel_path];
    inputs.extend(rt_path);
    let mut out = outputs(config, "summary", &inputs)?;
    out.csv("summary.csv", &io::summary_csv(&table)?)?;
    finish(out)
}
