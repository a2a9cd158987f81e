//! Browser bindings for three small demos: generation-interval
//! discretization, Rt recovery after a step change, and a partial-effect fit
//! on a synthetic panel. Every export returns a JSON string.

use chrono::NaiveDate;
use rtgam::effects::partial_effects;
use rtgam::gam::{fit_gam, Covariate, ModelSpec};
use rtgam::rt::{discretize_generation_interval, estimate_contiguous, RtConfig};
use rtgam::synth::{simulate_epidemic, simulate_panel, ScenarioSpec, TestVolume};
use rtgam::{Error, Result};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const DEMO_GRID: usize = 80;

fn to_js(result: Result<Value>) -> std::result::Result<String, JsError> {
    result
        .map(|v| v.to_string())
        .map_err(|e| JsError::new(&format!("{}: {e}", e.kind())))
}

/// Gamma generation interval binned to whole days.
pub fn generation_interval(mean: f64, sd: f64, max_lag: usize) -> Result<Value> {
    let gi = discretize_generation_interval(mean, sd, max_lag)?;
    Ok(json!({
        "lags": (1..=gi.max_lag()).collect::<Vec<_>>(),
        "weights": gi.weights,
        "discretized_mean": gi.discretized_mean(),
    }))
}

#[wasm_bindgen(js_name = generationInterval)]
pub fn generation_interval_js(
    mean: f64,
    sd: f64,
    max_lag: usize,
) -> std::result::Result<String, JsError> {
    to_js(generation_interval(mean, sd, max_lag))
}

/// Simulates an epidemic whose Rt drops from `before` to `after` on
/// `change_day`, reports it through the default delay and estimates Rt back.
/// A `poisson_seed` of 0 keeps the expected counts.
pub fn step_change(
    before: f64,
    after: f64,
    change_day: usize,
    days: usize,
    poisson_seed: u64,
) -> Result<Value> {
    if change_day >= days {
        return Err(Error::InvalidParameter(format!(
            "change day {change_day} must fall inside {days} days"
        )));
    }
    let config = RtConfig::default();
    let gi = config.generation_interval()?;
    let delay = config.delay_model()?;
    let truth: Vec<f64> = (0..days)
        .map(|t| if t < change_day { before } else { after })
        .collect();
    let seed = (poisson_seed != 0).then_some(poisson_seed);
    let infections = simulate_epidemic(&truth, &gi, 100.0, seed)?;
    let reports: Vec<f64> = (0..days)
        .map(|t| {
            delay
                .combined
                .iter()
                .enumerate()
                .filter(|(d, _)| *d <= t)
                .map(|(d, w)| w * infections[t - d])
                .sum::<f64>()
                .round()
        })
        .collect();
    let start = NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date");
    let series = estimate_contiguous("demo", start, &reports, &vec![1000; days], &config)?;
    let estimate: Vec<Option<f64>> = series.days.iter().map(|d| d.rt).collect();
    let provisional: Vec<bool> = series.days.iter().map(|d| d.flags.provisional).collect();
    Ok(json!({
        "day": (0..days).collect::<Vec<_>>(),
        "truth": truth,
        "reports": reports,
        "estimate": estimate,
        "provisional": provisional,
    }))
}

#[wasm_bindgen(js_name = stepChange)]
pub fn step_change_js(
    before: f64,
    after: f64,
    change_day: usize,
    days: usize,
    poisson_seed: u64,
) -> std::result::Result<String, JsError> {
    to_js(step_change(before, after, change_day, days, poisson_seed))
}

/// Fits the additive model to the true ln Rt of a synthetic panel and
/// returns each term's partial effect, its 95% band and the known curve
/// shifted to the same mean over the grid.
pub fn effect_fit(provinces: usize, days: usize, noise_sd: f64, seed: u64) -> Result<Value> {
    let spec = ScenarioSpec {
        provinces,
        days,
        noise_sd,
        seed,
        test_volume: TestVolume::Constant(1000),
        ..ScenarioSpec::default()
    };
    let sim = simulate_panel(&spec)?;
    let model = fit_gam(&sim.panel, &sim.true_rt, &ModelSpec::default())?;
    let mut terms = Vec::new();
    for term in &model.terms {
        let effect = partial_effects(&model, term.name(), DEMO_GRID)?;
        let truth = sim.effect(Covariate::from_name(term.name())?);
        let raw: Vec<f64> = effect.grid().iter().map(|&x| truth.eval(x)).collect();
        let shift =
            (raw.iter().sum::<f64>() - effect.values().iter().sum::<f64>()) / raw.len() as f64;
        terms.push(json!({
            "term": term.name(),
            "edf": term.total_edf(),
            "p_value": term.p_value,
            "grid": effect.grid(),
            "effect": effect.values(),
            "lo": effect.points.iter().map(|p| p.lo).collect::<Vec<_>>(),
            "hi": effect.points.iter().map(|p| p.hi).collect::<Vec<_>>(),
            "truth": raw.iter().map(|v| v - shift).collect::<Vec<_>>(),
        }));
    }
    Ok(json!({
        "n": model.n,
        "adjusted_r2": model.adjusted_r2,
        "terms": terms,
    }))
}

#[wasm_bindgen(js_name = effectFit)]
pub fn effect_fit_js(
    provinces: usize,
    days: usize,
    noise_sd: f64,
    seed: u64,
) -> std::result::Result<String, JsError> {
    to_js(effect_fit(provinces, days, noise_sd, seed))
}
