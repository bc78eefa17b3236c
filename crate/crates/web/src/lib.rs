//! wasm-bindgen exports for `www/index.html`. Each export returns a JSON
//! string; the `*_json` functions are the same operations without the JS
//! boundary.

use serde_json::{json, Value};
use uges::analysis::{concentrability, occupancy, CStar};
use uges::dataset::{compose_mixed, generate_dataset, GenerateConfig, Source};
use uges::env::{EnvKind, EnvSpec, PolicySpec};
use uges::mdp::{calibrate_noise, value_iteration};
use uges::sampler::SamplingMode;
use uges::trainer::{train, TrainData, TrainerConfig};
use wasm_bindgen::prelude::*;

type Result<T> = std::result::Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn c_star_json(c: CStar) -> Value {
    match c {
        CStar::Finite(v) => json!(v),
        CStar::Unbounded => json!(null),
    }
}

/// Expected visits per state under `policy`, summed over the horizon.
pub fn occupancy_json(env: &str, policy: &str) -> Result<Value> {
    let spec = EnvSpec::parse(env).map_err(err)?;
    let mdp = spec.build().map_err(err)?;
    let mu = policy.parse::<PolicySpec>().map_err(err)?.build(&mdp).map_err(err)?;
    let occ = occupancy(&mdp, &mu).map_err(err)?;
    let star = value_iteration(&mdp, 1e-10).map_err(err)?.policy_star;
    let report = concentrability(&mdp, &mu, &star).map_err(err)?;
    let cols = if spec.kind == EnvKind::Monolith { spec.size } else { mdp.n_states() };
    Ok(json!({
        "rows": mdp.n_states() / cols,
        "cols": cols,
        "visits": occ.state_visits(),
        "terminal": mdp.terminal_states(),
        "c_star": c_star_json(report.c_star),
    }))
}

/// `C*` of the eps-noised optimal policy on an even grid of eps in [0, 1],
/// plus the eps whose policy earns 60% of the optimal return.
pub fn concentrability_curve_json(env: &str, points: usize) -> Result<Value> {
    if points < 2 {
        return Err("need at least 2 points".into());
    }
    let mdp = EnvSpec::parse(env).map_err(err)?.build().map_err(err)?;
    let star = value_iteration(&mdp, 1e-10).map_err(err)?.policy_star;
    let mut eps = Vec::with_capacity(points);
    let mut c = Vec::with_capacity(points);
    for k in 0..points {
        let e = k as f64 / (points - 1) as f64;
        let mu = star.epsilon_noised(e).map_err(err)?;
        eps.push(e);
        c.push(c_star_json(concentrability(&mdp, &mu, &star).map_err(err)?.c_star));
    }
    let soa_eps = calibrate_noise(&mdp, &star, 0.6).ok();
    Ok(json!({ "epsilon": eps, "c_star": c, "soa_epsilon": soa_eps }))
}

/// Trains UGES and the naive mix on the same buffers and returns both
/// evaluation curves.
pub fn compare_json(env: &str, steps: usize, epsilon: f64, seed: u64) -> Result<Value> {
    let spec = EnvSpec::parse(env).map_err(err)?;
    let mdp = spec.build().map_err(err)?;
    let star = value_iteration(&mdp, 1e-10).map_err(err)?.policy_star;
    let soa_policy = PolicySpec::Soa(0.6).build(&mdp).map_err(err)?;
    let human_policy = star.epsilon_noised(0.05).map_err(err)?;
    let soa = generate_dataset(&mdp, &soa_policy, &GenerateConfig::new(spec.id(), Source::Soa, 200, seed))
        .map_err(err)?;
    let human = generate_dataset(&mdp, &human_policy, &GenerateConfig::new(spec.id(), Source::Human, 50, seed + 1))
        .map_err(err)?;
    let cfg = TrainerConfig {
        steps,
        epsilon,
        ensemble_size: 5,
        eval_every: (steps / 20).max(1),
        seed,
        ..TrainerConfig::default()
    };
    let uges_run = train(&cfg, TrainData::Uges { soa: &soa, human: &human }, &mdp).map_err(err)?;
    let mixed = compose_mixed(&soa, &human, cfg.soa_fraction).map_err(err)?;
    let naive_cfg = TrainerConfig {
        sampling: SamplingMode::Naive,
        ..cfg
    };
    let naive_run = train(&naive_cfg, TrainData::Naive { mixed: &mixed }, &mdp).map_err(err)?;
    let curve = |log: &uges::trainer::TrainLog| {
        json!({
            "steps": log.evals.iter().map(|e| e.step).collect::<Vec<_>>(),
            "exact_return": log.evals.iter().map(|e| e.exact_return).collect::<Vec<_>>(),
            "ledger": log.ledger(),
        })
    };
    Ok(json!({ "uges": curve(&uges_run.log), "naive": curve(&naive_run.log) }))
}

fn to_js(r: Result<Value>) -> std::result::Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn occupancy_heatmap(env: &str, policy: &str) -> std::result::Result<String, JsValue> {
    to_js(occupancy_json(env, policy))
}

#[wasm_bindgen]
pub fn concentrability_curve(env: &str, points: usize) -> std::result::Result<String, JsValue> {
    to_js(concentrability_curve_json(env, points))
}

#[wasm_bindgen]
pub fn compare_runs(env: &str, steps: usize, epsilon: f64, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(compare_json(env, steps, epsilon, seed as u64))
}
