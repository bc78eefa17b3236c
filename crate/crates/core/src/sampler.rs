//! Batch selection: the uncertainty-gated two-buffer rule and the naive
//! mixed-buffer baseline, plus the per-step decision ledger.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ReplayDataset, SarsRecord, Source};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Uges,
    Naive,
}

impl std::fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplingMode::Uges => "uges",
            SamplingMode::Naive => "naive",
        })
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uges" => Ok(SamplingMode::Uges),
            "naive" | "naivemixed" | "naive_mixed" | "naive-mixed" => Ok(SamplingMode::Naive),
            other => Err(Error::invalid(format!("unknown sampling mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    /// Threshold on the batch-mean ensemble standard deviation.
    pub epsilon: f64,
    pub batch_size: usize,
    pub mode: SamplingMode,
    /// Share of SOA successful trajectories in the naive mix.
    pub soa_fraction: f64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.soa_fraction > 0.0 && self.soa_fraction < 1.0) {
            return Err(Error::invalid("soa_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SamplerDecision {
    pub step: usize,
    pub source: Source,
    pub sigma_observed: f64,
    pub batch_size: usize,
}

/// The branch rule on its own: SOA iff `sigma < epsilon`.
pub fn uges_source(sigma: f64, epsilon: f64) -> Source {
    if sigma < epsilon {
        Source::Soa
    } else {
        Source::Human
    }
}

/// Draws `batch_size` records uniformly with replacement from `d`.
fn draw<R: Rng>(d: &ReplayDataset, batch_size: usize, rng: &mut R) -> Result<(Vec<usize>, Vec<SarsRecord>)> {
    let idx = d.sample_indices(batch_size, rng)?;
    let batch = idx.iter().map(|&i| d.records()[i]).collect();
    Ok((idx, batch))
}

/// A selected batch with the dataset indices it came from.
#[derive(Debug, Clone)]
pub struct Selection {
    pub batch: Vec<SarsRecord>,
    pub indices: Vec<usize>,
    pub decision: SamplerDecision,
}

pub fn uges_select<R: Rng>(
    sigma: f64,
    step: usize,
    cfg: &SamplerConfig,
    d_soa: &ReplayDataset,
    d_h: &ReplayDataset,
    rng: &mut R,
) -> Result<Selection> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    let source = uges_source(sigma, cfg.epsilon);
    let buffer = if source == Source::Soa { d_soa } else { d_h };
    if buffer.is_empty() {
        return Err(Error::EmptyDataset(format!("{source} buffer")));
    }
    let (indices, batch) = draw(buffer, cfg.batch_size, rng)?;
    Ok(Selection {
        batch,
        indices,
        decision: SamplerDecision {
            step,
            source,
            sigma_observed: sigma,
            batch_size: cfg.batch_size,
        },
    })
}

/// Uniform batch from the combined dataset; `sigma` is recorded only.
pub fn naive_select<R: Rng>(
    sigma: f64,
    step: usize,
    cfg: &SamplerConfig,
    d_mixed: &ReplayDataset,
    rng: &mut R,
) -> Result<Selection> {
    if d_mixed.is_empty() {
        return Err(Error::EmptyDataset("mixed buffer".into()));
    }
    let (indices, batch) = draw(d_mixed, cfg.batch_size, rng)?;
    Ok(Selection {
        batch,
        indices,
        decision: SamplerDecision {
            step,
            source: d_mixed.source(),
            sigma_observed: sigma,
            batch_size: cfg.batch_size,
        },
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LedgerCounts {
    pub soa_batches: usize,
    pub human_batches: usize,
    pub mixed_batches: usize,
    pub soa_records: usize,
    pub human_records: usize,
    pub mixed_records: usize,
}

impl LedgerCounts {
    pub fn total_batches(&self) -> usize {
        self.soa_batches + self.human_batches + self.mixed_batches
    }
}

pub fn expert_draw_ledger(decisions: &[SamplerDecision]) -> LedgerCounts {
    let mut c = LedgerCounts::default();
    for d in decisions {
        let (batches, records) = match d.source {
            Source::Soa => (&mut c.soa_batches, &mut c.soa_records),
            Source::Human => (&mut c.human_batches, &mut c.human_records),
            Source::Mixed => (&mut c.mixed_batches, &mut c.mixed_records),
        };
        *batches += 1;
        *records += d.batch_size;
    }
    c
}

/// CSV columns: step, sigma, epsilon, source, batch_size.
pub fn write_decision_log<W: Write>(out: W, decisions: &[SamplerDecision], epsilon: f64) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "sigma", "epsilon", "source", "batch_size"])?;
    for d in decisions {
        w.write_record([
            d.step.to_string(),
            d.sigma_observed.to_string(),
            epsilon.to_string(),
            d.source.to_string(),
            d.batch_size.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<decision log>", e))?;
    Ok(())
}

pub fn save_decision_log(path: impl AsRef<Path>, decisions: &[SamplerDecision], epsilon: f64) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_decision_log(std::io::BufWriter::new(file), decisions, epsilon)
}
