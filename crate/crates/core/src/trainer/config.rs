use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::{SamplerConfig, SamplingMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticMode {
    /// Greedy bootstrap, greedy evaluation over the mean ensemble.
    QLearning,
    /// Categorical soft actor supplies bootstrap actions and the evaluated policy.
    ActorCritic,
}

impl std::fmt::Display for CriticMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CriticMode::QLearning => "q_learning",
            CriticMode::ActorCritic => "actor_critic",
        })
    }
}

impl FromStr for CriticMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "q_learning" | "qlearning" => Ok(CriticMode::QLearning),
            "actor_critic" | "actorcritic" => Ok(CriticMode::ActorCritic),
            other => Err(Error::invalid(format!("unknown critic mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    /// Gradient steps (`E`).
    pub steps: usize,
    /// Ensemble size (`M`).
    pub ensemble_size: usize,
    pub epsilon: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub eta_q: f64,
    pub eta_pi: f64,
    pub alpha: f64,
    pub tau: f64,
    /// Coefficient on `log pi` in the actor objective.
    pub temperature: f64,
    pub mode: CriticMode,
    pub sampling: SamplingMode,
    pub soa_fraction: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainerConfig {
    /// Desk-scale defaults for the 5x5 monolith grid.
    fn default() -> Self {
        Self {
            steps: 4_000,
            ensemble_size: 10,
            epsilon: 0.05,
            batch_size: 32,
            gamma: 0.99,
            eta_q: 3e-4,
            eta_pi: 1e-4,
            alpha: 1.0,
            tau: 0.001,
            temperature: 1.0,
            mode: CriticMode::QLearning,
            sampling: SamplingMode::Uges,
            soa_fraction: 0.8,
            eval_every: 100,
            eval_episodes: 20,
            hidden: vec![32, 32],
            seed: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "steps",
    "ensemble_size",
    "epsilon",
    "batch_size",
    "gamma",
    "eta_q",
    "eta_pi",
    "alpha",
    "tau",
    "temperature",
    "mode",
    "sampling",
    "soa_fraction",
    "eval_every",
    "eval_episodes",
    "hidden",
    "seed",
];

impl TrainerConfig {
    /// Hyperparameters listed for the MuJoCo-style runs. `steps = 36` is kept
    /// as listed even though its unit is unclear.
    pub fn listed_mujoco() -> Self {
        Self {
            steps: 36,
            ensemble_size: 10,
            epsilon: 16.0,
            batch_size: 256,
            gamma: 0.99,
            eta_q: 3e-4,
            eta_pi: 1e-4,
            mode: CriticMode::ActorCritic,
            eval_every: 36,
            hidden: vec![256, 256],
            ..Self::default()
        }
    }

    /// Hyperparameters listed for the monolith runs.
    pub fn listed_monolith() -> Self {
        Self {
            steps: 36,
            ensemble_size: 10,
            epsilon: 16.0,
            batch_size: 32,
            gamma: 0.99,
            eta_q: 1e-4,
            eval_every: 36,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(m.to_string()));
        if self.steps == 0 {
            return fail("steps must be >= 1");
        }
        if self.ensemble_size < 2 {
            return fail("ensemble_size must be >= 2");
        }
        if self.eval_every == 0 || self.eval_every > self.steps {
            return fail("eval_every must lie in 1..=steps");
        }
        if self.eval_episodes == 0 {
            return fail("eval_episodes must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail("tau must lie in (0, 1]");
        }
        if !(self.eta_q > 0.0 && self.eta_pi > 0.0) {
            return fail("learning rates must be > 0");
        }
        if !(self.alpha >= 0.0 && self.temperature >= 0.0) {
            return fail("alpha and temperature must be >= 0");
        }
        if self.hidden.contains(&0) {
            return fail("hidden layer widths must be >= 1");
        }
        self.sampler().validate()
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            epsilon: self.epsilon,
            batch_size: self.batch_size,
            mode: self.sampling,
            soa_fraction: self.soa_fraction,
        }
    }

    /// Layer widths for a network over `n_states` one-hot inputs.
    pub fn layer_sizes(&self, n_states: usize, n_actions: usize) -> Vec<usize> {
        let mut sizes = vec![n_states];
        sizes.extend(&self.hidden);
        sizes.push(n_actions);
        sizes
    }

    /// Parses `key = value` lines; `#` starts a comment. Keys not given keep
    /// their defaults, except `eval_every`, which defaults to `steps / 40`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut eval_every = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key = value, found {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: &dyn std::fmt::Display| parse_err(format!("{key}: {e}"));
            match key {
                "steps" | "E" => cfg.steps = value.parse().map_err(|e| bad(&e))?,
                "ensemble_size" | "M" => cfg.ensemble_size = value.parse().map_err(|e| bad(&e))?,
                "epsilon" => cfg.epsilon = value.parse().map_err(|e| bad(&e))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|e| bad(&e))?,
                "gamma" => cfg.gamma = value.parse().map_err(|e| bad(&e))?,
                "eta_q" => cfg.eta_q = value.parse().map_err(|e| bad(&e))?,
                "eta_pi" => cfg.eta_pi = value.parse().map_err(|e| bad(&e))?,
                "alpha" => cfg.alpha = value.parse().map_err(|e| bad(&e))?,
                "tau" => cfg.tau = value.parse().map_err(|e| bad(&e))?,
                "temperature" => cfg.temperature = value.parse().map_err(|e| bad(&e))?,
                "mode" => cfg.mode = value.parse().map_err(|e| bad(&e))?,
                "sampling" => cfg.sampling = value.parse().map_err(|e| bad(&e))?,
                "soa_fraction" => cfg.soa_fraction = value.parse().map_err(|e| bad(&e))?,
                "eval_every" => eval_every = Some(value.parse().map_err(|e| bad(&e))?),
                "eval_episodes" => cfg.eval_episodes = value.parse().map_err(|e| bad(&e))?,
                "seed" => cfg.seed = value.parse().map_err(|e| bad(&e))?,
                "hidden" => {
                    cfg.hidden = value
                        .trim_matches(|c| c == '[' || c == ']')
                        .split(',')
                        .map(str::trim)
                        .filter(|v| !v.is_empty())
                        .map(|v| v.parse::<usize>().map_err(|e| bad(&e)))
                        .collect::<Result<_>>()?
                }
                other => {
                    return Err(parse_err(format!(
                        "unknown key {other:?} (known: {})",
                        KEYS.join(", ")
                    )))
                }
            }
        }
        cfg.eval_every = eval_every.unwrap_or((cfg.steps / 40).max(1));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Inverse of [`TrainerConfig::parse`].
    pub fn to_config_string(&self) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        let mut out = String::new();
        let fields: [(&str, String); 17] = [
            ("steps", self.steps.to_string()),
            ("ensemble_size", self.ensemble_size.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("gamma", self.gamma.to_string()),
            ("eta_q", self.eta_q.to_string()),
            ("eta_pi", self.eta_pi.to_string()),
            ("alpha", self.alpha.to_string()),
            ("tau", self.tau.to_string()),
            ("temperature", self.temperature.to_string()),
            ("mode", self.mode.to_string()),
            ("sampling", self.sampling.to_string()),
            ("soa_fraction", self.soa_fraction.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("hidden", hidden.join(",")),
            ("seed", self.seed.to_string()),
        ];
        for (k, v) in fields {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
