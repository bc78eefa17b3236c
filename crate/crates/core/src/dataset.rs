//! Offline SARS data: records, trajectories, provenance-tagged replay
//! datasets, generation from behavior policies, mixing and the text codec.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{rollout_with, success_probability, TabularMdp, TabularPolicy};

pub const DATASET_MAGIC: &str = "UGES-DATASET";
pub const DATASET_VERSION: u32 = 1;
const RECORD_COLUMNS: &str = "episode_id t state action reward next_state done";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SarsRecord {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub done: bool,
    pub episode_id: u64,
    pub t: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    records: Vec<SarsRecord>,
}

impl Trajectory {
    pub fn new(records: Vec<SarsRecord>) -> Self {
        Self { records }
    }

    pub fn records(&self) -> &[SarsRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }

    pub fn is_successful(&self) -> bool {
        is_successful(&self.records)
    }

    /// Checks chaining, step numbering, shared episode id and that `done`
    /// only appears on the final record.
    pub fn validate(&self) -> std::result::Result<(), String> {
        validate_records(&self.records)
    }
}

/// A trajectory is successful when its summed reward is positive.
pub fn is_successful(records: &[SarsRecord]) -> bool {
    records.iter().map(|r| r.reward).sum::<f64>() > 0.0
}

fn validate_records(records: &[SarsRecord]) -> std::result::Result<(), String> {
    let Some(first) = records.first() else {
        return Err("empty trajectory".into());
    };
    for (k, rec) in records.iter().enumerate() {
        if rec.episode_id != first.episode_id {
            return Err(format!("record {k} has episode id {}", rec.episode_id));
        }
        if rec.t != k {
            return Err(format!("record {k} has step index {}", rec.t));
        }
        if rec.done && k + 1 != records.len() {
            return Err(format!("record {k} is done but not last"));
        }
        if let Some(next) = records.get(k + 1) {
            if next.state != rec.next_state {
                return Err(format!("record {} does not continue from record {k}", k + 1));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Soa,
    Mixed,
}

impl Source {
    fn code(self) -> char {
        match self {
            Source::Human => 'H',
            Source::Soa => 'S',
            Source::Mixed => 'M',
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Human => "human",
            Source::Soa => "soa",
            Source::Mixed => "mixed",
        })
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "human" => Ok(Source::Human),
            "soa" => Ok(Source::Soa),
            "mixed" => Ok(Source::Mixed),
            other => Err(Error::invalid(format!("unknown source {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct EpisodeSpan {
    start: usize,
    len: usize,
    origin: Source,
}

/// Immutable buffer of well-formed episodes stored back to back.
///
/// `source` is `Human` or `Soa` for single-provenance buffers and `Mixed`
/// for buffers composed by [`compose_mixed`], which keep each episode's
/// origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayDataset {
    env_id: String,
    source: Source,
    records: Vec<SarsRecord>,
    episodes: Vec<EpisodeSpan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_episodes: usize,
    pub n_timesteps: usize,
    pub n_successful_trajectories: usize,
    pub mean_return: f64,
}

impl ReplayDataset {
    pub fn from_trajectories(
        env_id: impl Into<String>,
        source: Source,
        trajectories: Vec<Trajectory>,
    ) -> Result<Self> {
        if source == Source::Mixed {
            return Err(Error::invalid(
                "mixed datasets are built with compose_mixed",
            ));
        }
        let origins = vec![source; trajectories.len()];
        Self::assemble(env_id.into(), source, trajectories, origins)
    }

    fn assemble(
        env_id: String,
        source: Source,
        trajectories: Vec<Trajectory>,
        origins: Vec<Source>,
    ) -> Result<Self> {
        if env_id.is_empty() || env_id.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!("bad environment id {env_id:?}")));
        }
        let mut records = Vec::new();
        let mut episodes = Vec::with_capacity(trajectories.len());
        for (k, (traj, origin)) in trajectories.into_iter().zip(origins).enumerate() {
            traj.validate()
                .map_err(|msg| Error::invalid(format!("trajectory {k}: {msg}")))?;
            episodes.push(EpisodeSpan {
                start: records.len(),
                len: traj.len(),
                origin,
            });
            records.extend(traj.records);
        }
        Ok(Self {
            env_id,
            source,
            records,
            episodes,
        })
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn records(&self) -> &[SarsRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn episode(&self, k: usize) -> &[SarsRecord] {
        let span = self.episodes[k];
        &self.records[span.start..span.start + span.len]
    }

    pub fn episode_origin(&self, k: usize) -> Source {
        self.episodes[k].origin
    }

    pub fn episodes(&self) -> impl Iterator<Item = &[SarsRecord]> + '_ {
        (0..self.episodes.len()).map(move |k| self.episode(k))
    }

    /// Index of the episode containing record `idx`.
    pub fn episode_of(&self, idx: usize) -> usize {
        self.episodes.partition_point(|span| span.start <= idx) - 1
    }

    /// Provenance of record `idx`.
    pub fn record_origin(&self, idx: usize) -> Source {
        self.episodes[self.episode_of(idx)].origin
    }

    pub fn trajectories(&self) -> Vec<Trajectory> {
        self.episodes()
            .map(|recs| Trajectory::new(recs.to_vec()))
            .collect()
    }

    pub fn successful_count(&self, origin: Option<Source>) -> usize {
        (0..self.episodes.len())
            .filter(|&k| origin.is_none_or(|o| self.episodes[k].origin == o))
            .filter(|&k| is_successful(self.episode(k)))
            .count()
    }

    pub fn stats(&self) -> DatasetStats {
        let n_episodes = self.episodes.len();
        let total: f64 = self.records.iter().map(|r| r.reward).sum();
        DatasetStats {
            n_episodes,
            n_timesteps: self.records.len(),
            n_successful_trajectories: self.successful_count(None),
            mean_return: if n_episodes == 0 {
                0.0
            } else {
                total / n_episodes as f64
            },
        }
    }

    /// Uniform draw of `batch_size` record indices, with replacement.
    pub fn sample_indices<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.records.is_empty() {
            return Err(Error::EmptyDataset(format!("{} buffer", self.source)));
        }
        Ok((0..batch_size)
            .map(|_| rng.gen_range(0..self.records.len()))
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&text)
    }

    pub fn encode(&self) -> String {
        let mut out = String::new();
        out.push_str(DATASET_MAGIC);
        out.push('\n');
        out.push_str(&format!("version {DATASET_VERSION}\n"));
        out.push_str(&format!("env {}\n", self.env_id));
        out.push_str(&format!("source {}\n", self.source));
        out.push_str(&format!("episodes {}\n", self.episodes.len()));
        out.push_str(&format!("records {}\n", self.records.len()));
        if self.source == Source::Mixed {
            let codes: String = self.episodes.iter().map(|e| e.origin.code()).collect();
            out.push_str(&format!("origins {codes}\n"));
        }
        out.push_str(RECORD_COLUMNS);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{} {} {} {} {} {} {}\n",
                r.episode_id,
                r.t,
                r.state,
                r.action,
                r.reward,
                r.next_state,
                u8::from(r.done)
            ));
        }
        out
    }

    pub fn decode(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next_line = |what: &str| {
            lines.next().ok_or_else(|| Error::Parse {
                line: text.lines().count() + 1,
                message: format!("unexpected end of file, expected {what}"),
            })
        };

        let (line, magic) = next_line("magic")?;
        if magic != DATASET_MAGIC {
            return Err(Error::Parse {
                line,
                message: format!("bad magic {magic:?}"),
            });
        }
        let (line, v) = next_line("version")?;
        let version: u32 = header_value(line, v, "version")?;
        if version != DATASET_VERSION {
            return Err(Error::Version {
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let (line, v) = next_line("env")?;
        let env_id: String = header_value(line, v, "env")?;
        let (line, v) = next_line("source")?;
        let source: Source = header_value(line, v, "source")?;
        let (line, v) = next_line("episodes")?;
        let n_episodes: usize = header_value(line, v, "episodes")?;
        let (line, v) = next_line("records")?;
        let n_records: usize = header_value(line, v, "records")?;
        let origins: Vec<Source> = if source == Source::Mixed {
            let (line, v) = next_line("origins")?;
            let codes = v
                .strip_prefix("origins")
                .map(str::trim)
                .ok_or_else(|| Error::Parse {
                    line,
                    message: "expected `origins <codes>`".into(),
                })?;
            let parsed: Vec<Source> = codes
                .chars()
                .map(|c| match c {
                    'H' => Ok(Source::Human),
                    'S' => Ok(Source::Soa),
                    other => Err(Error::Parse {
                        line,
                        message: format!("bad origin code {other:?}"),
                    }),
                })
                .collect::<Result<_>>()?;
            if parsed.len() != n_episodes {
                return Err(Error::Parse {
                    line,
                    message: format!("{} origins for {n_episodes} episodes", parsed.len()),
                });
            }
            parsed
        } else {
            vec![source; n_episodes]
        };
        let (line, cols) = next_line("column header")?;
        if cols != RECORD_COLUMNS {
            return Err(Error::Parse {
                line,
                message: "bad column header".into(),
            });
        }

        let mut trajectories: Vec<Trajectory> = Vec::with_capacity(n_episodes);
        let mut current: Vec<SarsRecord> = Vec::new();
        let mut seen = 0usize;
        let mut last_line = line;
        for (line, text_line) in lines {
            last_line = line;
            if text_line.is_empty() {
                continue;
            }
            let rec = parse_record(line, text_line)?;
            seen += 1;
            if seen > n_records {
                return Err(Error::Parse {
                    line,
                    message: format!("more than the declared {n_records} records"),
                });
            }
            if let Some(prev) = current.last() {
                if rec.t == 0 || rec.episode_id != prev.episode_id {
                    trajectories.push(Trajectory::new(std::mem::take(&mut current)));
                }
            }
            current.push(rec);
        }
        if !current.is_empty() {
            trajectories.push(Trajectory::new(current));
        }
        if seen != n_records {
            return Err(Error::Parse {
                line: last_line + 1,
                message: format!("expected {n_records} records, found {seen}"),
            });
        }
        if trajectories.len() != n_episodes {
            return Err(Error::Parse {
                line: last_line + 1,
                message: format!(
                    "expected {n_episodes} episodes, found {}",
                    trajectories.len()
                ),
            });
        }
        Self::assemble(env_id, source, trajectories, origins).map_err(|e| Error::Parse {
            line: 0,
            message: e.to_string(),
        })
    }
}

fn header_value<T: FromStr>(line: usize, text: &str, key: &str) -> Result<T> {
    let value = text
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("expected `{key} <value>`"),
        })?;
    value.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad {key} value {value:?}"),
    })
}

fn parse_record(line: usize, text: &str) -> Result<SarsRecord> {
    let fields: Vec<&str> = text.split(' ').collect();
    if fields.len() != 7 {
        return Err(Error::Parse {
            line,
            message: format!("expected 7 fields, found {}", fields.len()),
        });
    }
    fn field<T: FromStr>(line: usize, raw: &str, name: &str) -> Result<T> {
        raw.parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad {name} {raw:?}"),
        })
    }
    let reward: f64 = field(line, fields[4], "reward")?;
    if !reward.is_finite() {
        return Err(Error::Parse {
            line,
            message: "reward must be finite".into(),
        });
    }
    let done = match fields[6] {
        "0" => false,
        "1" => true,
        other => {
            return Err(Error::Parse {
                line,
                message: format!("bad done flag {other:?}"),
            })
        }
    };
    Ok(SarsRecord {
        episode_id: field(line, fields[0], "episode_id")?,
        t: field(line, fields[1], "t")?,
        state: field(line, fields[2], "state")?,
        action: field(line, fields[3], "action")?,
        reward,
        next_state: field(line, fields[5], "next_state")?,
        done,
    })
}

#[derive(Debug, Clone)]
pub struct GenerateConfig {
    pub env_id: String,
    pub source: Source,
    pub target_successful: usize,
    pub seed: u64,
    /// Give up after this many episodes.
    pub episode_cap: usize,
}

impl GenerateConfig {
    pub fn new(env_id: impl Into<String>, source: Source, target_successful: usize, seed: u64) -> Self {
        Self {
            env_id: env_id.into(),
            source,
            target_successful,
            seed,
            episode_cap: 1_000_000,
        }
    }
}

/// Rolls out `policy` until exactly `target_successful` successful episodes
/// are collected. Failed episodes met along the way are kept.
pub fn generate_dataset(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    cfg: &GenerateConfig,
) -> Result<ReplayDataset> {
    if cfg.target_successful == 0 {
        return Err(Error::invalid("target number of successful trajectories must be >= 1"));
    }
    if cfg.source == Source::Mixed {
        return Err(Error::invalid("generated datasets have a single source"));
    }
    if success_probability(mdp, policy)? <= 0.0 {
        return Err(Error::UnreachableGoal {
            episodes: 0,
            successes: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trajectories = Vec::new();
    let mut successes = 0;
    let mut episode_id = 0u64;
    while successes < cfg.target_successful {
        if episode_id as usize >= cfg.episode_cap {
            return Err(Error::UnreachableGoal {
                episodes: cfg.episode_cap,
                successes,
            });
        }
        let traj = rollout_with(mdp, policy, &mut rng, episode_id)?;
        episode_id += 1;
        if traj.is_empty() {
            continue;
        }
        if traj.is_successful() {
            successes += 1;
        }
        trajectories.push(traj);
    }
    ReplayDataset::from_trajectories(cfg.env_id.clone(), cfg.source, trajectories)
}

/// Builds the naive baseline's single buffer: every SOA episode, plus the
/// leading human episodes holding exactly the number of successful
/// trajectories that makes successes split `soa_fraction : 1 - soa_fraction`.
pub fn compose_mixed(
    d_soa: &ReplayDataset,
    d_h: &ReplayDataset,
    soa_fraction: f64,
) -> Result<ReplayDataset> {
    if !(soa_fraction > 0.0 && soa_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "soa_fraction {soa_fraction} must lie strictly between 0 and 1"
        )));
    }
    if d_soa.env_id != d_h.env_id {
        return Err(Error::invalid(format!(
            "datasets come from different environments ({} vs {})",
            d_soa.env_id, d_h.env_id
        )));
    }
    let soa_successes = d_soa.successful_count(None);
    if soa_successes == 0 {
        return Err(Error::InsufficientData {
            side: "soa",
            needed: 1,
            available: 0,
        });
    }
    let needed = (soa_successes as f64 * (1.0 - soa_fraction) / soa_fraction).round() as usize;
    compose_with_human(d_soa, d_h, needed.max(1))
}

/// Every SOA episode plus the leading human episodes that hold `needed`
/// successful trajectories.
pub fn compose_with_human(d_soa: &ReplayDataset, d_h: &ReplayDataset, needed: usize) -> Result<ReplayDataset> {
    if d_soa.env_id != d_h.env_id {
        return Err(Error::invalid(format!(
            "datasets come from different environments ({} vs {})",
            d_soa.env_id, d_h.env_id
        )));
    }
    let available = d_h.successful_count(None);
    if available < needed {
        return Err(Error::InsufficientData {
            side: "human",
            needed,
            available,
        });
    }

    let mut trajectories = d_soa.trajectories();
    let mut origins = vec![Source::Soa; trajectories.len()];
    let mut taken = 0;
    for episode in d_h.episodes() {
        if taken == needed {
            break;
        }
        if is_successful(episode) {
            taken += 1;
        }
        trajectories.push(Trajectory::new(episode.to_vec()));
        origins.push(Source::Human);
    }
    ReplayDataset::assemble(d_soa.env_id.clone(), Source::Mixed, trajectories, origins)
}

/// Uniform minibatch with replacement.
pub fn sample_batch<R: Rng>(
    d: &ReplayDataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<SarsRecord>> {
    Ok(d
        .sample_indices(batch_size, rng)?
        .into_iter()
        .map(|i| d.records[i])
        .collect())
}
