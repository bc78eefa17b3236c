//! Q-ensemble critic: Bellman targets from the target networks, the squared
//! Bellman error, the conservative (logsumexp) penalty, and the ensemble
//! mean/variance estimators that drive expert sampling.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::dataset::SarsRecord;
use crate::error::{Error, Result};
use crate::neural::{adam_step, featurize_batch, soft_update, ByteReader, MlpNet, OptimizerState, Tape};
use crate::seeds::derive_seed;

pub const ENSEMBLE_MAGIC: &[u8; 8] = b"UGESENS\0";
pub const ENSEMBLE_VERSION: u32 = 1;

/// `M` running Q-networks with one target network each.
#[derive(Debug, Clone, PartialEq)]
pub struct QEnsemble {
    members: Vec<MlpNet>,
    targets: Vec<MlpNet>,
}

impl QEnsemble {
    /// Members get distinct seeds derived from `seed`; each target starts as a
    /// copy of its member.
    pub fn new(sizes: &[usize], m: usize, seed: u64) -> Result<Self> {
        let seeds: Vec<u64> = (0..m as u64).map(|i| derive_seed(seed, 0x5eed_0000 + i)).collect();
        Self::with_member_seeds(sizes, &seeds)
    }

    pub fn with_member_seeds(sizes: &[usize], seeds: &[u64]) -> Result<Self> {
        let members = seeds
            .iter()
            .map(|&s| MlpNet::new(sizes, s))
            .collect::<Result<Vec<_>>>()?;
        Self::from_members(members)
    }

    pub fn from_members(members: Vec<MlpNet>) -> Result<Self> {
        let targets = members.clone();
        Self::from_parts(members, targets)
    }

    pub fn from_parts(members: Vec<MlpNet>, targets: Vec<MlpNet>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::invalid("an ensemble needs at least 2 members"));
        }
        if targets.len() != members.len() {
            return Err(Error::invalid("one target network per member"));
        }
        let sizes = members[0].sizes();
        if members.iter().chain(&targets).any(|n| n.sizes() != sizes) {
            return Err(Error::invalid("ensemble members must share one architecture"));
        }
        Ok(Self { members, targets })
    }

    pub fn m(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[MlpNet] {
        &self.members
    }

    pub fn targets(&self) -> &[MlpNet] {
        &self.targets
    }

    pub fn members_mut(&mut self) -> &mut [MlpNet] {
        &mut self.members
    }

    pub fn targets_mut(&mut self) -> &mut [MlpNet] {
        &mut self.targets
    }

    pub fn n_states(&self) -> usize {
        self.members[0].input_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.members[0].output_dim()
    }

    /// Mean over running members of `Q(s, .)` for every state, row-major.
    pub fn mean_q_table(&self) -> Vec<f64> {
        let n = self.n_states();
        let (x, _) = featurize_batch(0..n, n);
        mean_outputs(&self.members, &x, n)
    }

    /// `min_i Q_i(s, .)` over running members for the given states.
    pub fn min_q(&self, states: &[usize]) -> Vec<f64> {
        let (x, n) = featurize_batch(states.iter().copied(), self.n_states());
        let mut out = self.members[0].forward_batch(&x, n);
        for net in &self.members[1..] {
            for (o, q) in out.iter_mut().zip(net.forward_batch(&x, n)) {
                *o = o.min(q);
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let blobs: Vec<Vec<u8>> = self
            .members
            .iter()
            .chain(&self.targets)
            .map(MlpNet::to_bytes)
            .collect();
        let mut out = Vec::new();
        out.extend_from_slice(ENSEMBLE_MAGIC);
        out.extend_from_slice(&ENSEMBLE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.m() as u32).to_le_bytes());
        for blob in &blobs {
            out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
        }
        for blob in blobs {
            out.extend(blob);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = ByteReader { bytes, pos: 0 };
        if reader.take(8)? != ENSEMBLE_MAGIC {
            return Err(Error::Parse {
                line: 0,
                message: "not an ensemble checkpoint".into(),
            });
        }
        let version = reader.u32()?;
        if version != ENSEMBLE_VERSION {
            return Err(Error::Version {
                found: version,
                expected: ENSEMBLE_VERSION,
            });
        }
        let m = reader.u32()? as usize;
        if !(2..=4096).contains(&m) {
            return Err(Error::Parse {
                line: 0,
                message: format!("implausible ensemble size {m}"),
            });
        }
        let lens = (0..2 * m)
            .map(|_| reader.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()) as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut nets = Vec::with_capacity(2 * m);
        for len in lens {
            nets.push(MlpNet::from_bytes(reader.take(len)?)?);
        }
        if reader.pos != bytes.len() {
            return Err(Error::Parse {
                line: 0,
                message: "trailing bytes after ensemble checkpoint".into(),
            });
        }
        let targets = nets.split_off(m);
        Self::from_parts(nets, targets)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn mean_outputs(nets: &[MlpNet], x: &[f64], n: usize) -> Vec<f64> {
    let mut acc = nets[0].forward_batch(x, n);
    for net in &nets[1..] {
        for (a, q) in acc.iter_mut().zip(net.forward_batch(x, n)) {
            *a += q;
        }
    }
    let m = nets.len() as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    acc
}

/// How the bootstrap action at `s'` is chosen.
#[derive(Debug, Clone, Copy)]
pub enum Bootstrap<'a> {
    /// `max_a` of the mean target-ensemble Q.
    Greedy,
    /// One pre-drawn action per record, e.g. sampled from an actor at `s'`.
    Actions(&'a [usize]),
}

/// Per-record regression targets `y = r` for terminal records, else
/// `y = r + gamma * Q'(s', a')` with `Q'` the mean over target networks.
/// Only target networks are read.
pub fn bellman_targets(
    ens: &QEnsemble,
    batch: &[SarsRecord],
    bootstrap: Bootstrap<'_>,
    gamma: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n_a = ens.n_actions();
    let (x, n) = featurize_batch(batch.iter().map(|r| r.next_state), ens.n_states());
    let q_next = mean_outputs(&ens.targets, &x, n);
    batch
        .iter()
        .enumerate()
        .map(|(k, rec)| {
            if rec.done {
                return Ok(rec.reward);
            }
            let row = &q_next[k * n_a..(k + 1) * n_a];
            let future = match bootstrap {
                Bootstrap::Greedy => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Bootstrap::Actions(actions) => {
                    let a = *actions
                        .get(k)
                        .ok_or_else(|| Error::invalid("one bootstrap action per record"))?;
                    *row.get(a).ok_or_else(|| Error::invalid(format!("action {a} out of range")))?
                }
            };
            Ok(rec.reward + gamma * future)
        })
        .collect()
}

/// Numerically stable `log sum exp`.
pub fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Loss terms and parameter gradient for one network.
#[derive(Debug, Clone)]
pub struct MemberLoss {
    pub bellman: f64,
    pub cql: f64,
    pub grads: Vec<f64>,
}

/// `mean_k (Q(s_k, a_k) - y_k)^2 + alpha * mean_k [lse Q(s_k, .) - Q(s_k, a_k)]`
/// for a single network, with its exact gradient.
pub fn member_loss_and_grad(
    net: &MlpNet,
    batch: &[SarsRecord],
    targets: &[f64],
    alpha: f64,
) -> Result<MemberLoss> {
    if batch.is_empty() || targets.len() != batch.len() {
        return Err(Error::invalid("batch and targets must be non-empty and aligned"));
    }
    let n_a = net.output_dim();
    let (x, n) = featurize_batch(batch.iter().map(|r| r.state), net.input_dim());
    let mut tape = Tape::default();
    let q = net.record(&x, n, &mut tape).to_vec();
    let inv_n = 1.0 / n as f64;
    let mut d_out = vec![0.0; q.len()];
    let (mut bellman, mut cql) = (0.0, 0.0);
    for (k, rec) in batch.iter().enumerate() {
        let row = &q[k * n_a..(k + 1) * n_a];
        let d_row = &mut d_out[k * n_a..(k + 1) * n_a];
        let err = row[rec.action] - targets[k];
        bellman += err * err * inv_n;
        d_row[rec.action] += 2.0 * err * inv_n;
        if alpha != 0.0 {
            cql += (logsumexp(row) - row[rec.action]) * inv_n;
            for (d, p) in d_row.iter_mut().zip(softmax(row)) {
                *d += alpha * p * inv_n;
            }
            d_row[rec.action] -= alpha * inv_n;
        }
    }
    let grads = net.backward(&tape, &d_out)?;
    Ok(MemberLoss { bellman, cql, grads })
}

/// Squared Bellman error of one network and its gradient.
pub fn bellman_loss_and_grad(net: &MlpNet, batch: &[SarsRecord], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    let out = member_loss_and_grad(net, batch, targets, 0.0)?;
    Ok((out.bellman, out.grads))
}

/// Conservative penalty of one network and its gradient.
pub fn cql_penalty_and_grad(net: &MlpNet, batch: &[SarsRecord]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n_a = net.output_dim();
    let (x, n) = featurize_batch(batch.iter().map(|r| r.state), net.input_dim());
    let mut tape = Tape::default();
    let q = net.record(&x, n, &mut tape).to_vec();
    let inv_n = 1.0 / n as f64;
    let mut d_out = vec![0.0; q.len()];
    let mut penalty = 0.0;
    for (k, rec) in batch.iter().enumerate() {
        let row = &q[k * n_a..(k + 1) * n_a];
        penalty += (logsumexp(row) - row[rec.action]) * inv_n;
        for (d, p) in d_out[k * n_a..(k + 1) * n_a].iter_mut().zip(softmax(row)) {
            *d = p * inv_n;
        }
        d_out[k * n_a + rec.action] -= inv_n;
    }
    Ok((penalty, net.backward(&tape, &d_out)?))
}

/// Mean over batch and members of the squared Bellman error.
pub fn bellman_loss(ens: &QEnsemble, batch: &[SarsRecord], targets: &[f64]) -> Result<f64> {
    let per_member = member_q_at_data(ens, batch)?;
    if targets.len() != batch.len() {
        return Err(Error::invalid("targets not aligned with batch"));
    }
    let total: f64 = per_member
        .iter()
        .flat_map(|qs| qs.iter().zip(targets).map(|(q, y)| (q - y) * (q - y)))
        .sum();
    Ok(total / (batch.len() * ens.m()) as f64)
}

/// Mean over batch and members of `lse_a Q(s, a) - Q(s, a_data)`.
pub fn cql_penalty(ens: &QEnsemble, batch: &[SarsRecord]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n_a = ens.n_actions();
    let (x, n) = featurize_batch(batch.iter().map(|r| r.state), ens.n_states());
    let mut total = 0.0;
    for net in &ens.members {
        let q = net.forward_batch(&x, n);
        for (k, rec) in batch.iter().enumerate() {
            let row = &q[k * n_a..(k + 1) * n_a];
            total += logsumexp(row) - row[rec.action];
        }
    }
    Ok(total / (n * ens.m()) as f64)
}

/// `Q_i(s_k, a_k)` for every member `i` and record `k`.
fn member_q_at_data(ens: &QEnsemble, batch: &[SarsRecord]) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n_a = ens.n_actions();
    let (x, n) = featurize_batch(batch.iter().map(|r| r.state), ens.n_states());
    Ok(ens
        .members
        .iter()
        .map(|net| {
            let q = net.forward_batch(&x, n);
            batch
                .iter()
                .enumerate()
                .map(|(k, rec)| q[k * n_a + rec.action])
                .collect()
        })
        .collect())
}

/// Ensemble mean and population variance (divisor `M`) of `Q(s, a)` for each
/// record's `(s, a)`, and the batch summary `mean_k sqrt(sigma_sq_k)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintyEstimate {
    pub mu: Vec<f64>,
    pub sigma_sq: Vec<f64>,
    pub batch_sigma: f64,
}

/// Mean and population variance by Welford's recurrence, so identical
/// inputs give exactly zero variance.
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    (mean, (m2 / values.len() as f64).max(0.0))
}

pub fn uncertainty(ens: &QEnsemble, batch: &[SarsRecord]) -> Result<UncertaintyEstimate> {
    if ens.m() < 2 {
        return Err(Error::InvalidState("uncertainty needs at least 2 members".into()));
    }
    let per_member = member_q_at_data(ens, batch)?;
    let mut mu = Vec::with_capacity(batch.len());
    let mut sigma_sq = Vec::with_capacity(batch.len());
    let mut column = vec![0.0; ens.m()];
    for k in 0..batch.len() {
        for (c, qs) in column.iter_mut().zip(&per_member) {
            *c = qs[k];
        }
        let (mean, var) = mean_and_variance(&column);
        mu.push(mean);
        sigma_sq.push(var);
    }
    let batch_sigma = sigma_sq.iter().map(|v| v.sqrt()).sum::<f64>() / batch.len() as f64;
    Ok(UncertaintyEstimate {
        mu,
        sigma_sq,
        batch_sigma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticConfig {
    pub gamma: f64,
    /// Weight of the conservative penalty.
    pub alpha: f64,
    /// Soft target update rate.
    pub tau: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha: 1.0,
            tau: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticLossReport {
    pub bellman_loss: f64,
    pub cql_penalty: f64,
    pub total: f64,
    /// `(bellman, cql)` per member.
    pub per_member: Vec<(f64, f64)>,
}

/// One gradient step on every member followed by the soft target update.
///
/// Member `i` descends its own `bellman_i + alpha * cql_i`; the reported
/// losses are the means over members. All gradients are computed and checked
/// before any parameter changes.
pub fn critic_step(
    ens: &mut QEnsemble,
    opts: &mut [OptimizerState],
    batch: &[SarsRecord],
    cfg: &CriticConfig,
    bootstrap: Bootstrap<'_>,
) -> Result<CriticLossReport> {
    if opts.len() != ens.m() {
        return Err(Error::invalid("one optimizer state per member"));
    }
    let targets = bellman_targets(ens, batch, bootstrap, cfg.gamma)?;
    let losses = ens
        .members
        .iter()
        .map(|net| member_loss_and_grad(net, batch, &targets, cfg.alpha))
        .collect::<Result<Vec<_>>>()?;
    let m = ens.m() as f64;
    let bellman_loss = losses.iter().map(|l| l.bellman).sum::<f64>() / m;
    let cql_penalty = losses.iter().map(|l| l.cql).sum::<f64>() / m;
    let total = bellman_loss + cfg.alpha * cql_penalty;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss { step: None });
    }
    if losses.iter().any(|l| l.grads.iter().any(|g| !g.is_finite())) {
        return Err(Error::NonFiniteGradient);
    }
    for ((net, opt), loss) in ens.members.iter_mut().zip(opts.iter_mut()).zip(&losses) {
        adam_step(net, &loss.grads, opt)?;
    }
    for (target, net) in ens.targets.iter_mut().zip(&ens.members) {
        soft_update(target, net, cfg.tau)?;
    }
    Ok(CriticLossReport {
        bellman_loss,
        cql_penalty,
        total,
        per_member: losses.iter().map(|l| (l.bellman, l.cql)).collect(),
    })
}
