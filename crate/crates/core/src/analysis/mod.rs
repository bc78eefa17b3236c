//! Exact occupancy measures, concentrability coefficients, learning curves
//! and the data-efficiency comparison.

mod plot;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

pub use plot::render_svg;

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, TabularPolicy};
use crate::trainer::EvalSeries;

/// `d_t(s, a)` for `t = 1..=H`, plus the mass that has already terminated.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    n_states: usize,
    n_actions: usize,
    /// `d[t - 1]` is the row-major `S x A` slice for step `t`.
    d: Vec<Vec<f64>>,
    /// Probability that the episode has terminated before acting at step `t`.
    retired: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn horizon(&self) -> usize {
        self.d.len()
    }

    /// `d_t(s, a)` with `t` counted from 1.
    pub fn at(&self, t: usize, s: usize, a: usize) -> f64 {
        self.d[t - 1][s * self.n_actions + a]
    }

    pub fn slice(&self, t: usize) -> &[f64] {
        &self.d[t - 1]
    }

    pub fn retired(&self, t: usize) -> f64 {
        self.retired[t - 1]
    }

    /// State marginal summed over all steps (expected visits per state).
    pub fn state_visits(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states];
        for slice in &self.d {
            for (s, row) in slice.chunks(self.n_actions).enumerate() {
                out[s] += row.iter().sum::<f64>();
            }
        }
        out
    }
}

/// Forward recursion `d_1(s, a) = S0(s) pi(a|s)`,
/// `d_{t+1}(s', a') = sum_{s,a} d_t(s, a) T(s'|s, a) pi(a'|s')`. Mass entering a
/// terminal state retires, matching rollout semantics.
pub fn occupancy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<OccupancyMeasure> {
    policy.check_matches(mdp)?;
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let mut state_mass = mdp.start_dist().to_vec();
    let mut retired_so_far = 0.0;
    let mut d = Vec::with_capacity(mdp.horizon());
    let mut retired = Vec::with_capacity(mdp.horizon());
    for _ in 0..mdp.horizon() {
        let mut slice = vec![0.0; n_s * n_a];
        for s in 0..n_s {
            if mdp.is_terminal(s) {
                retired_so_far += state_mass[s];
                continue;
            }
            for a in 0..n_a {
                slice[s * n_a + a] = state_mass[s] * policy.prob(s, a);
            }
        }
        let mut next = vec![0.0; n_s];
        for s in 0..n_s {
            for a in 0..n_a {
                let m = slice[s * n_a + a];
                if m == 0.0 {
                    continue;
                }
                for (s2, p) in mdp.transition_row(s, a).iter().enumerate() {
                    next[s2] += m * p;
                }
            }
        }
        d.push(slice);
        retired.push(retired_so_far);
        state_mass = next;
    }
    Ok(OccupancyMeasure {
        n_states: n_s,
        n_actions: n_a,
        d,
        retired,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Witness {
    pub t: usize,
    pub s: usize,
    pub a: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CStar {
    Finite(f64),
    Unbounded,
}

impl CStar {
    pub fn value(self) -> f64 {
        match self {
            CStar::Finite(v) => v,
            CStar::Unbounded => f64::INFINITY,
        }
    }

    fn to_json(self) -> Value {
        match self {
            CStar::Finite(v) => json!(v),
            CStar::Unbounded => json!("unbounded"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrabilityReport {
    pub c_star: CStar,
    /// `(t, s, a)` attaining the maximum ratio (first in scan order on ties).
    pub witness: Option<Witness>,
    /// Largest ratio at each step; `f64::INFINITY` where unbounded.
    pub per_t_max: Vec<f64>,
}

impl ConcentrabilityReport {
    /// `{c_star, witness: {t, s, a}, per_t_max: [...]}`; unbounded values are
    /// the string `"unbounded"`.
    pub fn to_json(&self) -> Value {
        json!({
            "c_star": self.c_star.to_json(),
            "witness": self.witness,
            "per_t_max": self
                .per_t_max
                .iter()
                .map(|&v| if v.is_finite() { CStar::Finite(v) } else { CStar::Unbounded }.to_json())
                .collect::<Vec<_>>(),
        })
    }
}

/// `max_t max_{(s,a): d*_t > 0} d*_t(s,a) / d^mu_t(s,a)`.
pub fn concentrability(mdp: &TabularMdp, mu: &TabularPolicy, pi_star: &TabularPolicy) -> Result<ConcentrabilityReport> {
    if !pi_star.is_deterministic() {
        return Err(Error::invalid("the reference optimal policy must be deterministic"));
    }
    let d_star = occupancy(mdp, pi_star)?;
    let d_mu = occupancy(mdp, mu)?;
    let n_a = mdp.n_actions();
    let mut per_t_max = Vec::with_capacity(mdp.horizon());
    let mut best: Option<(f64, Witness)> = None;
    for t in 1..=mdp.horizon() {
        let mut t_max = 0.0f64;
        for (i, (&p, &q)) in d_star.slice(t).iter().zip(d_mu.slice(t)).enumerate() {
            if p <= 0.0 {
                continue;
            }
            let ratio = if q > 0.0 { p / q } else { f64::INFINITY };
            t_max = t_max.max(ratio);
            if best.map_or(true, |(b, _)| ratio > b) {
                best = Some((ratio, Witness { t, s: i / n_a, a: i % n_a }));
            }
        }
        per_t_max.push(t_max);
    }
    let c_star = match best {
        Some((v, _)) if v.is_infinite() => CStar::Unbounded,
        Some((v, _)) => CStar::Finite(v),
        None => CStar::Finite(0.0),
    };
    Ok(ConcentrabilityReport {
        c_star,
        witness: best.map(|(_, w)| w),
        per_t_max,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    /// `C*(mu_h) < C*(mu_soa)`.
    pub dominates: bool,
    pub human: ConcentrabilityReport,
    pub soa: ConcentrabilityReport,
    pub diagnostic: Option<String>,
}

impl DominanceReport {
    pub fn to_json(&self) -> Value {
        json!({
            "dominates": self.dominates,
            "human": self.human.to_json(),
            "soa": self.soa.to_json(),
            "diagnostic": self.diagnostic,
        })
    }
}

pub fn check_expert_dominance(
    mdp: &TabularMdp,
    mu_h: &TabularPolicy,
    mu_soa: &TabularPolicy,
    pi_star: &TabularPolicy,
) -> Result<DominanceReport> {
    let human = concentrability(mdp, mu_h, pi_star)?;
    let soa = concentrability(mdp, mu_soa, pi_star)?;
    let (dominates, diagnostic) = match (human.c_star, soa.c_star) {
        (CStar::Unbounded, CStar::Unbounded) => (false, Some("both coefficients are unbounded".to_string())),
        (h, s) => (h.value() < s.value(), None),
    };
    Ok(DominanceReport {
        dominates,
        human,
        soa,
        diagnostic,
    })
}

/// Mean and interquartile band of one method's evaluation series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningCurve {
    pub method: String,
    pub seeds: Vec<u64>,
    pub steps: Vec<usize>,
    pub mean: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
}

impl LearningCurve {
    /// First step where the mean reaches `threshold`.
    pub fn steps_to_reach(&self, threshold: f64) -> Option<usize> {
        self.steps.iter().zip(&self.mean).find(|(_, &m)| m >= threshold).map(|(&s, _)| s)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "mean", "q25", "q75"])?;
        for i in 0..self.steps.len() {
            w.write_record([
                self.steps[i].to_string(),
                self.mean[i].to_string(),
                self.q25[i].to_string(),
                self.q75[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Groups series by method (in first-seen order) and reduces each group to
/// mean and interquartile band. All series of one method must share a grid.
pub fn learning_curves(series: &[EvalSeries]) -> Result<Vec<LearningCurve>> {
    if series.is_empty() {
        return Err(Error::invalid("at least one log is required"));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&EvalSeries>> = BTreeMap::new();
    for s in series {
        if !groups.contains_key(s.method.as_str()) {
            order.push(&s.method);
        }
        groups.entry(&s.method).or_default().push(s);
    }
    order
        .into_iter()
        .map(|method| {
            let runs = &groups[method];
            let grid = &runs[0].steps;
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Alignment(format!("{method}: steps are not strictly increasing")));
            }
            if let Some(bad) = runs.iter().find(|r| &r.steps != grid || r.values.len() != grid.len()) {
                return Err(Error::Alignment(format!(
                    "{method}: seed {} uses a different evaluation grid",
                    bad.seed
                )));
            }
            let mut curve = LearningCurve {
                method: method.to_string(),
                seeds: runs.iter().map(|r| r.seed).collect(),
                steps: grid.clone(),
                mean: Vec::with_capacity(grid.len()),
                q25: Vec::with_capacity(grid.len()),
                q75: Vec::with_capacity(grid.len()),
            };
            for i in 0..grid.len() {
                let mut column: Vec<f64> = runs.iter().map(|r| r.values[i]).collect();
                curve.mean.push(column.iter().sum::<f64>() / column.len() as f64);
                column.sort_by(f64::total_cmp);
                curve.q25.push(quantile(&column, 0.25));
                curve.q75.push(quantile(&column, 0.75));
            }
            Ok(curve)
        })
        .collect()
}

/// Writes `curve_<method>.csv` per method and `curves.svg` into `dir`.
pub fn export_curves(series: &[EvalSeries], dir: impl AsRef<Path>) -> Result<(Vec<LearningCurve>, Vec<PathBuf>)> {
    let dir = dir.as_ref();
    let curves = learning_curves(series)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for c in &curves {
        let path = dir.join(format!("curve_{}.csv", c.method));
        c.write_csv(&path)?;
        paths.push(path);
    }
    let svg = dir.join("curves.svg");
    std::fs::write(&svg, render_svg(&curves, "episodic return")).map_err(|e| Error::io(&svg, e))?;
    paths.push(svg);
    Ok((curves, paths))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NaiveRun {
    /// Successful human trajectories in the naive mix.
    pub human_successful: usize,
    pub final_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataEfficiencyReport {
    pub uges_final_return: f64,
    /// Distinct successful human trajectories UGES actually drew.
    pub uges_human_drawn: usize,
    pub tolerance: f64,
    /// Naive sweep sorted by human-dataset size, with a match flag each.
    pub sweep: Vec<(NaiveRun, bool)>,
    pub matched_size: Option<usize>,
    pub multiplier: f64,
    /// `true` when no naive run matched and `multiplier` is only a lower bound.
    pub lower_bound: bool,
}

/// Smallest naive human-dataset size whose final return is within
/// `tolerance` of UGES's (or better), divided by UGES's human draws.
pub fn data_efficiency_report(
    uges_final_return: f64,
    uges_human_drawn: usize,
    naive: &[NaiveRun],
    tolerance: f64,
) -> Result<DataEfficiencyReport> {
    if naive.is_empty() {
        return Err(Error::invalid("the naive sweep is empty"));
    }
    let mut sweep: Vec<(NaiveRun, bool)> = naive
        .iter()
        .map(|&r| (r, r.final_return >= uges_final_return - tolerance))
        .collect();
    sweep.sort_by_key(|(r, _)| r.human_successful);
    let matched_size = sweep.iter().find(|(_, m)| *m).map(|(r, _)| r.human_successful);
    let lower_bound = matched_size.is_none();
    let numerator = matched_size.unwrap_or_else(|| sweep.last().unwrap().0.human_successful) as f64;
    let multiplier = if uges_human_drawn == 0 {
        f64::INFINITY
    } else {
        numerator / uges_human_drawn as f64
    };
    Ok(DataEfficiencyReport {
        uges_final_return,
        uges_human_drawn,
        tolerance,
        sweep,
        matched_size,
        multiplier,
        lower_bound,
    })
}
