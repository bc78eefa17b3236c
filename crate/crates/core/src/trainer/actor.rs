//! Categorical soft actor over discrete actions.

use rand::Rng;

use crate::critic::{softmax, QEnsemble};
use crate::dataset::SarsRecord;
use crate::error::{Error, Result};
use crate::mdp::{sample_categorical, TabularPolicy};
use crate::neural::{adam_step, featurize_batch, MlpNet, OptimizerState, Tape};

#[derive(Debug, Clone, PartialEq)]
pub struct ActorNet {
    pub net: MlpNet,
    pub temperature: f64,
}

impl ActorNet {
    pub fn new(sizes: &[usize], seed: u64, temperature: f64) -> Result<Self> {
        Ok(Self {
            net: MlpNet::new(sizes, seed)?,
            temperature,
        })
    }

    /// `pi(. | s)` for each given state, row-major.
    pub fn probs(&self, states: &[usize]) -> Vec<f64> {
        let n_a = self.net.output_dim();
        let (x, n) = featurize_batch(states.iter().copied(), self.net.input_dim());
        let logits = self.net.forward_batch(&x, n);
        logits.chunks(n_a).flat_map(softmax).collect()
    }

    /// The full stochastic policy as a table.
    pub fn to_policy(&self) -> TabularPolicy {
        let states: Vec<usize> = (0..self.net.input_dim()).collect();
        TabularPolicy::new(states.len(), self.net.output_dim(), self.probs(&states))
            .expect("softmax rows are distributions")
    }

    /// One action per state drawn from `pi(. | s)`.
    pub fn sample_actions<R: Rng>(&self, states: &[usize], rng: &mut R) -> Vec<usize> {
        let n_a = self.net.output_dim();
        self.probs(states)
            .chunks(n_a)
            .map(|row| sample_categorical(row, rng))
            .collect()
    }
}

/// `J = mean_s sum_a pi(a|s) (temperature * log pi(a|s) - q(s, a))` and its
/// parameter gradient. `q` holds one row of action values per state.
/// Minimizing `J` ascends the soft objective `E[q - temperature * log pi]`.
pub fn actor_loss_and_grad(
    net: &MlpNet,
    states: &[usize],
    q: &[f64],
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    let n_a = net.output_dim();
    if states.is_empty() || q.len() != states.len() * n_a {
        return Err(Error::invalid("states and action values must be non-empty and aligned"));
    }
    let (x, n) = featurize_batch(states.iter().copied(), net.input_dim());
    let mut tape = Tape::default();
    let logits = net.record(&x, n, &mut tape).to_vec();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut d_out = vec![0.0; logits.len()];
    for k in 0..n {
        let z = &logits[k * n_a..(k + 1) * n_a];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let f: Vec<f64> = z
            .iter()
            .zip(&q[k * n_a..(k + 1) * n_a])
            .map(|(zi, qi)| temperature * (zi - log_norm) - qi)
            .collect();
        let p = softmax(z);
        let mean_f: f64 = p.iter().zip(&f).map(|(pi, fi)| pi * fi).sum();
        loss += mean_f * inv_n;
        for b in 0..n_a {
            d_out[k * n_a + b] = p[b] * (f[b] - mean_f) * inv_n;
        }
    }
    Ok((loss, net.backward(&tape, &d_out)?))
}

/// One policy-improvement step against `min_i Q_i` of the running ensemble
/// at the batch states. Returns the pre-step loss.
pub fn actor_step(
    actor: &mut ActorNet,
    opt: &mut OptimizerState,
    ens: &QEnsemble,
    batch: &[SarsRecord],
) -> Result<f64> {
    let states: Vec<usize> = batch.iter().map(|r| r.state).collect();
    let min_q = ens.min_q(&states);
    let (loss, grads) = actor_loss_and_grad(&actor.net, &states, &min_q, actor.temperature)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: None });
    }
    adam_step(&mut actor.net, &grads, opt)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(q_row: &[f64], steps: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let n_a = q_row.len();
        let mut actor = ActorNet::new(&[1, 8, n_a], seed, 1.0).unwrap();
        let before = actor.probs(&[0]);
        let mut opt = OptimizerState::for_net(&actor.net, 1e-2);
        let states = vec![0; 16];
        let q: Vec<f64> = states.iter().flat_map(|_| q_row.iter().copied()).collect();
        for _ in 0..steps {
            let (_, g) = actor_loss_and_grad(&actor.net, &states, &q, 1.0).unwrap();
            adam_step(&mut actor.net, &g, &mut opt).unwrap();
        }
        (before, actor.probs(&[0]))
    }

    #[test]
    fn probabilities_normalize() {
        let actor = ActorNet::new(&[5, 8, 4], 1, 1.0).unwrap();
        for row in actor.probs(&[0, 1, 2, 3, 4]).chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn flat_values_drive_toward_uniform() {
        let (before, after) = fit(&[0.5, 0.5, 0.5], 800, 2);
        let spread = |p: &[f64]| p.iter().fold(0.0f64, |m, v| m.max((v - 1.0 / 3.0).abs()));
        assert!(spread(&after) < spread(&before));
        assert!(spread(&after) < 1e-3, "{after:?}");
    }

    #[test]
    fn dominant_action_gains_mass() {
        let (before, after) = fit(&[0.0, 5.0, 0.0, 0.0], 100, 3);
        assert!(after[1] > before[1]);
    }

    #[test]
    fn soft_fixed_point_ratio() {
        let g = 0.7;
        let (_, p) = fit(&[g, 0.0], 3000, 4);
        assert!((p[0] / p[1] - g.exp()).abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn large_gap_argmax_matches_values() {
        let q = [0.1, 0.4, 2.0, -1.0];
        let (_, p) = fit(&q, 2000, 5);
        let best = (0..4).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(best, 2);
    }
}
