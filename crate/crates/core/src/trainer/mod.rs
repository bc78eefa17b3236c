//! The training loop: uncertainty measurement, batch selection, critic and
//! optional actor updates, and periodic evaluation.

mod actor;
mod config;

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use actor::{actor_loss_and_grad, actor_step, ActorNet};
pub use config::{CriticMode, TrainerConfig};

use crate::critic::{critic_step, uncertainty, Bootstrap, CriticConfig, QEnsemble};
use crate::dataset::{ReplayDataset, SarsRecord, Source};
use crate::error::{Error, Result};
use crate::mdp::{argmax, expected_return, rollout_with, TabularMdp, TabularPolicy};
use crate::neural::OptimizerState;
use crate::sampler::{
    expert_draw_ledger, naive_select, uges_select, LedgerCounts, SamplerDecision, SamplingMode, Selection,
};
use crate::seeds::derive_seed;

const STREAM_SAMPLER: u64 = 1;
const STREAM_ENSEMBLE: u64 = 2;
const STREAM_ACTOR: u64 = 3;
const STREAM_EVAL: u64 = 4;

/// Buffers handed to [`train`].
#[derive(Debug, Clone, Copy)]
pub enum TrainData<'a> {
    Uges {
        soa: &'a ReplayDataset,
        human: &'a ReplayDataset,
    },
    Naive {
        mixed: &'a ReplayDataset,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepEntry {
    pub step: usize,
    pub bellman_loss: f64,
    pub cql_penalty: f64,
    pub total: f64,
    pub batch_sigma: f64,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalEntry {
    /// Number of gradient steps completed.
    pub step: usize,
    pub mean_return: f64,
    /// Undiscounted expected return of the evaluated policy, by dynamic programming.
    pub exact_return: f64,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLog {
    pub method: SamplingMode,
    pub seed: u64,
    pub steps: Vec<StepEntry>,
    pub decisions: Vec<SamplerDecision>,
    pub evals: Vec<EvalEntry>,
    /// Distinct successful human episodes that contributed at least one record.
    pub human_successful_drawn: usize,
}

impl TrainLog {
    pub fn ledger(&self) -> LedgerCounts {
        expert_draw_ledger(&self.decisions)
    }

    pub fn final_eval(&self) -> Option<&EvalEntry> {
        self.evals.last()
    }

    /// First evaluation step whose `metric` reaches `threshold`.
    pub fn steps_to_reach(&self, threshold: f64, metric: impl Fn(&EvalEntry) -> f64) -> Option<usize> {
        self.evals.iter().find(|e| metric(e) >= threshold).map(|e| e.step)
    }

    /// CSV columns: step, bellman_loss, cql_penalty, total, batch_sigma, source.
    pub fn write_steps_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "bellman_loss", "cql_penalty", "total", "batch_sigma", "source"])?;
        for s in &self.steps {
            w.write_record([
                s.step.to_string(),
                s.bellman_loss.to_string(),
                s.cql_penalty.to_string(),
                s.total.to_string(),
                s.batch_sigma.to_string(),
                s.source.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<train log>", e))?;
        Ok(())
    }

    /// CSV columns: method, seed, step, mean_return, exact_return, episodes.
    pub fn write_evals_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "seed", "step", "mean_return", "exact_return", "episodes"])?;
        for e in &self.evals {
            w.write_record([
                self.method.to_string(),
                self.seed.to_string(),
                e.step.to_string(),
                e.mean_return.to_string(),
                e.exact_return.to_string(),
                e.returns.len().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<eval log>", e))?;
        Ok(())
    }
}

/// One run's evaluation series as read back from its eval CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSeries {
    pub method: String,
    pub seed: u64,
    pub steps: Vec<usize>,
    /// Values of the chosen metric, aligned with `steps`.
    pub values: Vec<f64>,
}

impl EvalSeries {
    pub fn from_log(log: &TrainLog) -> Self {
        Self {
            method: log.method.to_string(),
            seed: log.seed,
            steps: log.evals.iter().map(|e| e.step).collect(),
            values: log.evals.iter().map(|e| e.mean_return).collect(),
        }
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        Self::read_csv_metric(input, "mean_return")
    }

    /// Reads `metric` (`mean_return` or `exact_return`) as the series values.
    pub fn read_csv_metric<R: BufRead>(input: R, metric: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        let column = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("eval log has no {name:?} column"),
            })
        };
        let (c_method, c_seed, c_step, c_value) = (column("method")?, column("seed")?, column("step")?, column(metric)?);
        let mut series = Self {
            method: String::new(),
            seed: 0,
            steps: Vec::new(),
            values: Vec::new(),
        };
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let line = i + 2;
            let get = |k: usize| {
                row.get(k).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("missing column {k}"),
                })
            };
            let num_err = |m: String| Error::Parse { line, message: m };
            if i == 0 {
                series.method = get(c_method)?.to_string();
                series.seed = get(c_seed)?.parse().map_err(|e| num_err(format!("seed: {e}")))?;
            }
            series.steps.push(get(c_step)?.parse().map_err(|e| num_err(format!("step: {e}")))?);
            series
                .values
                .push(get(c_value)?.parse().map_err(|e| num_err(format!("{metric}: {e}")))?);
        }
        if series.steps.is_empty() {
            return Err(Error::EmptyDataset("eval log has no rows".into()));
        }
        Ok(series)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// What [`train`] hands back.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub ensemble: QEnsemble,
    pub actor: Option<ActorNet>,
    pub log: TrainLog,
}

/// Read-only view passed to the evaluation hook.
pub struct Snapshot<'a> {
    pub step: usize,
    pub ensemble: &'a QEnsemble,
    pub actor: Option<&'a ActorNet>,
    pub eval: &'a EvalEntry,
}

pub fn train(cfg: &TrainerConfig, data: TrainData<'_>, mdp: &TabularMdp) -> Result<TrainOutput> {
    train_with(cfg, data, mdp, |_| Ok(()))
}

/// [`train`] with a callback after every evaluation (for checkpoints).
pub fn train_with(
    cfg: &TrainerConfig,
    data: TrainData<'_>,
    mdp: &TabularMdp,
    mut on_eval: impl FnMut(&Snapshot<'_>) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let sampler_cfg = cfg.sampler();
    let (probe_buffer, human_buffer): (&ReplayDataset, &ReplayDataset) = match (cfg.sampling, data) {
        (SamplingMode::Uges, TrainData::Uges { soa, human }) => (soa, human),
        (SamplingMode::Naive, TrainData::Naive { mixed }) => (mixed, mixed),
        (mode, _) => {
            return Err(Error::invalid(format!("{mode} sampling was given the wrong buffers")));
        }
    };
    for d in [probe_buffer, human_buffer] {
        if d.is_empty() {
            return Err(Error::EmptyDataset(format!("{} buffer", d.source())));
        }
        if let Some(bad) = d.records().iter().find(|r| r.state >= mdp.n_states() || r.action >= mdp.n_actions()) {
            return Err(Error::invalid(format!(
                "record ({}, {}) lies outside the evaluation MDP",
                bad.state, bad.action
            )));
        }
    }

    let sizes = cfg.layer_sizes(mdp.n_states(), mdp.n_actions());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SAMPLER));
    let mut ens = QEnsemble::new(&sizes, cfg.ensemble_size, derive_seed(cfg.seed, STREAM_ENSEMBLE))?;
    let mut opts: Vec<OptimizerState> = ens.members().iter().map(|n| OptimizerState::for_net(n, cfg.eta_q)).collect();
    let mut actor = match cfg.mode {
        CriticMode::QLearning => None,
        CriticMode::ActorCritic => Some((
            ActorNet::new(&sizes, derive_seed(cfg.seed, STREAM_ACTOR), cfg.temperature)?,
            OptimizerState::new(0, cfg.eta_pi),
        )),
    };
    if let Some((a, opt)) = actor.as_mut() {
        *opt = OptimizerState::for_net(&a.net, cfg.eta_pi);
    }
    let critic_cfg = CriticConfig {
        gamma: cfg.gamma,
        alpha: cfg.alpha,
        tau: cfg.tau,
    };

    let mut log = TrainLog {
        method: cfg.sampling,
        seed: cfg.seed,
        steps: Vec::with_capacity(cfg.steps),
        decisions: Vec::with_capacity(cfg.steps),
        evals: Vec::new(),
        human_successful_drawn: 0,
    };
    let mut human_seen = BTreeSet::new();
    let mut prev_batch: Option<Vec<SarsRecord>> = None;
    let abort = |step: usize| move |e: Error| match e {
        Error::NonFiniteLoss { .. } | Error::NonFiniteGradient => Error::NonFiniteLoss { step: Some(step) },
        other => other,
    };

    for step in 0..cfg.steps {
        // Before the first update there is no previous batch; probe the
        // cheap buffer instead.
        let probe = match prev_batch.take() {
            Some(b) => b,
            None => crate::dataset::sample_batch(probe_buffer, cfg.batch_size, &mut rng)?,
        };
        let sigma = uncertainty(&ens, &probe)?.batch_sigma;
        if !sigma.is_finite() {
            return Err(Error::NonFiniteLoss { step: Some(step) });
        }
        let Selection {
            batch,
            indices,
            decision,
        } = match data {
            TrainData::Uges { soa, human } => uges_select(sigma, step, &sampler_cfg, soa, human, &mut rng)?,
            TrainData::Naive { mixed } => naive_select(sigma, step, &sampler_cfg, mixed, &mut rng)?,
        };
        for &i in &indices {
            let from_human = match data {
                TrainData::Uges { .. } => decision.source == Source::Human,
                TrainData::Naive { mixed } => mixed.record_origin(i) == Source::Human,
            };
            if from_human {
                let ep = human_buffer.episode_of(i);
                if crate::dataset::is_successful(human_buffer.episode(ep)) {
                    human_seen.insert(ep);
                }
            }
        }

        let bootstrap_actions;
        let bootstrap = match &actor {
            None => Bootstrap::Greedy,
            Some((a, _)) => {
                let next: Vec<usize> = batch.iter().map(|r| r.next_state).collect();
                bootstrap_actions = a.sample_actions(&next, &mut rng);
                Bootstrap::Actions(&bootstrap_actions)
            }
        };
        let report = critic_step(&mut ens, &mut opts, &batch, &critic_cfg, bootstrap).map_err(abort(step))?;
        if let Some((a, opt)) = actor.as_mut() {
            actor_step(a, opt, &ens, &batch).map_err(abort(step))?;
        }

        log.steps.push(StepEntry {
            step,
            bellman_loss: report.bellman_loss,
            cql_penalty: report.cql_penalty,
            total: report.total,
            batch_sigma: sigma,
            source: decision.source,
        });
        log.decisions.push(decision);
        prev_batch = Some(batch);

        let done = step + 1;
        if done % cfg.eval_every == 0 || done == cfg.steps {
            let policy = match &actor {
                None => PolicySource::Greedy(&ens),
                Some((a, _)) => PolicySource::Actor(a),
            };
            let seed = derive_seed(cfg.seed, STREAM_EVAL);
            let result = evaluate(policy, mdp, cfg.eval_episodes, seed)?;
            let exact = expected_return(mdp, &policy.to_policy(), false)?;
            let entry = EvalEntry {
                step: done,
                mean_return: result.mean,
                exact_return: exact,
                returns: result.returns,
            };
            on_eval(&Snapshot {
                step: done,
                ensemble: &ens,
                actor: actor.as_ref().map(|(a, _)| a),
                eval: &entry,
            })?;
            log.evals.push(entry);
        }
    }
    log.human_successful_drawn = human_seen.len();
    Ok(TrainOutput {
        ensemble: ens,
        actor: actor.map(|(a, _)| a),
        log,
    })
}

/// The policy being evaluated.
#[derive(Debug, Clone, Copy)]
pub enum PolicySource<'a> {
    /// Argmax of the mean running-ensemble Q, lowest index on ties.
    Greedy(&'a QEnsemble),
    /// Argmax of the actor's distribution, lowest index on ties.
    Actor(&'a ActorNet),
    Tabular(&'a TabularPolicy),
}

impl PolicySource<'_> {
    pub fn to_policy(&self) -> TabularPolicy {
        match *self {
            PolicySource::Greedy(ens) => TabularPolicy::greedy(ens.n_actions(), &ens.mean_q_table()),
            PolicySource::Actor(a) => {
                let n_a = a.net.output_dim();
                let states: Vec<usize> = (0..a.net.input_dim()).collect();
                let actions: Vec<usize> = a.probs(&states).chunks(n_a).map(argmax).collect();
                TabularPolicy::deterministic(n_a, &actions).expect("argmax lies in range")
            }
            PolicySource::Tabular(p) => p.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub mean: f64,
    pub std_error: f64,
    pub returns: Vec<f64>,
}

/// Mean undiscounted episodic return over `episodes` seeded rollouts.
pub fn evaluate(policy: PolicySource<'_>, mdp: &TabularMdp, episodes: usize, seed: u64) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::invalid("evaluation needs at least one episode"));
    }
    let table = policy.to_policy();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let returns = (0..episodes as u64)
        .map(|k| rollout_with(mdp, &table, &mut rng, k).map(|t| t.total_reward()))
        .collect::<Result<Vec<f64>>>()?;
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = if returns.len() > 1 {
        returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(EvalResult {
        mean,
        std_error: (var / n).sqrt(),
        returns,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub final_return: f64,
    pub final_exact_return: f64,
    pub human_draws: usize,
}

/// One seeded UGES run per candidate threshold, best first: highest final
/// return, then fewest human batches.
pub fn sweep_epsilon(
    cfg: &TrainerConfig,
    candidates: &[f64],
    d_soa: &ReplayDataset,
    d_h: &ReplayDataset,
    mdp: &TabularMdp,
) -> Result<Vec<SweepRow>> {
    if candidates.len() < 2 {
        return Err(Error::invalid("an epsilon sweep needs at least 2 candidates"));
    }
    let mut rows = Vec::with_capacity(candidates.len());
    for &epsilon in candidates {
        let run_cfg = TrainerConfig {
            epsilon,
            sampling: SamplingMode::Uges,
            ..cfg.clone()
        };
        let out = train(&run_cfg, TrainData::Uges { soa: d_soa, human: d_h }, mdp)?;
        let last = out.log.final_eval().expect("at least one evaluation");
        rows.push(SweepRow {
            epsilon,
            final_return: last.mean_return,
            final_exact_return: last.exact_return,
            human_draws: out.log.ledger().human_batches,
        });
    }
    rows.sort_by(|a, b| {
        b.final_return
            .total_cmp(&a.final_return)
            .then(a.human_draws.cmp(&b.human_draws))
    });
    Ok(rows)
}

#[cfg(test)]
mod tests;
