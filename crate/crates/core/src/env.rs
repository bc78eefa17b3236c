//! Text descriptions of environments and behaviour policies.
//!
//! An environment spec is either a shorthand (`monolith5`, `chain6`,
//! `bandit2`) or `key = value` lines:
//!
//! ```text
//! kind = monolith
//! size = 5
//! gamma = 0.99
//! horizon = 20   # optional, kind-specific default otherwise
//! seed = 0       # drives the dynamics of kind = random
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    build_bandit, build_chain, build_monolith_grid, calibrate_noise, value_iteration, TabularMdp,
    TabularPolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Monolith,
    Chain,
    Bandit,
    /// Sparse random dynamics with a terminal state; `size` states, `actions` actions.
    Random,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Monolith => "monolith",
            EnvKind::Chain => "chain",
            EnvKind::Bandit => "bandit",
            EnvKind::Random => "random",
        })
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monolith" => Ok(EnvKind::Monolith),
            "chain" => Ok(EnvKind::Chain),
            "bandit" => Ok(EnvKind::Bandit),
            "random" => Ok(EnvKind::Random),
            other => Err(Error::invalid(format!(
                "unknown env kind {other:?} (expected monolith, chain, bandit or random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    /// Grid side, chain length, number of arms, or number of states.
    pub size: usize,
    pub gamma: f64,
    pub horizon: Option<usize>,
    pub seed: u64,
    /// Action count for `kind = random`.
    pub actions: usize,
}

impl EnvSpec {
    pub fn new(kind: EnvKind, size: usize) -> Self {
        Self {
            kind,
            size,
            gamma: 0.99,
            horizon: None,
            seed: 0,
            actions: 3,
        }
    }

    /// Shorthand (`monolith5`) or `key = value` text.
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim();
        if !trimmed.contains('=') {
            return Self::parse_shorthand(trimmed);
        }
        let mut kind = None;
        let mut spec = Self::new(EnvKind::Monolith, 0);
        let mut size = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, found {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: &dyn fmt::Display| err(format!("{key}: {e}"));
            match key {
                "kind" => kind = Some(value.parse::<EnvKind>().map_err(|e| bad(&e))?),
                "size" => size = Some(value.parse().map_err(|e| bad(&e))?),
                "gamma" => spec.gamma = value.parse().map_err(|e| bad(&e))?,
                "horizon" => spec.horizon = Some(value.parse().map_err(|e| bad(&e))?),
                "seed" => spec.seed = value.parse().map_err(|e| bad(&e))?,
                "actions" => spec.actions = value.parse().map_err(|e| bad(&e))?,
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        spec.kind = kind.ok_or_else(|| Error::invalid("env spec is missing `kind`"))?;
        spec.size = size.ok_or_else(|| Error::invalid("env spec is missing `size`"))?;
        spec.build()?;
        Ok(spec)
    }

    fn parse_shorthand(s: &str) -> Result<Self> {
        let split = s.find(|c: char| c.is_ascii_digit()).unwrap_or(s.len());
        let (name, digits) = s.split_at(split);
        let kind: EnvKind = name.parse()?;
        let size = digits
            .parse()
            .map_err(|_| Error::invalid(format!("env shorthand {s:?} needs a size, e.g. monolith5")))?;
        let spec = Self::new(kind, size);
        spec.build()?;
        Ok(spec)
    }

    /// Reads `arg` as a spec file when such a file exists, else as a shorthand.
    pub fn resolve(arg: &str) -> Result<Self> {
        let path = Path::new(arg);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Self::parse(&text)
        } else {
            Self::parse(arg)
        }
    }

    /// Short identifier stored in dataset headers.
    pub fn id(&self) -> String {
        format!("{}{}", self.kind, self.size)
    }

    pub fn build(&self) -> Result<TabularMdp> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma must lie in [0, 1]"));
        }
        let mdp = match self.kind {
            EnvKind::Monolith => build_monolith_grid(self.size, self.gamma)?,
            EnvKind::Chain => build_chain(self.size, self.gamma)?,
            EnvKind::Bandit => build_bandit(self.size, self.gamma, 1)?,
            EnvKind::Random => {
                if self.size < 2 || self.actions == 0 {
                    return Err(Error::invalid("random env needs size >= 2 and actions >= 1"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                TabularMdp::random(self.size, self.actions, 2 * self.size, self.gamma, true, &mut rng)?
            }
        };
        match self.horizon {
            Some(h) => mdp.with_horizon(h),
            None => Ok(mdp),
        }
    }

    pub fn to_spec_string(&self) -> String {
        let mut out = format!("kind = {}\nsize = {}\ngamma = {}\n", self.kind, self.size, self.gamma);
        if let Some(h) = self.horizon {
            out += &format!("horizon = {h}\n");
        }
        out += &format!("seed = {}\n", self.seed);
        if self.kind == EnvKind::Random {
            out += &format!("actions = {}\n", self.actions);
        }
        out
    }
}

/// Behaviour policy for data generation and analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySpec {
    Optimal,
    /// Optimal policy mixed with uniform noise at rate `eps`.
    Noised(f64),
    Uniform,
    /// Noised optimal policy calibrated to reach this fraction of the optimal return.
    Soa(f64),
}

pub const SOA_FRACTION: f64 = 0.6;

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let number = |a: Option<&str>, default: Option<f64>| -> Result<f64> {
            match (a, default) {
                (Some(a), _) => a
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("policy {s:?}: {e}"))),
                (None, Some(d)) => Ok(d),
                (None, None) => Err(Error::invalid(format!("policy {s:?} needs a value, e.g. noised:0.1"))),
            }
        };
        let spec = match (name, arg) {
            ("optimal", None) => PolicySpec::Optimal,
            ("uniform", None) => PolicySpec::Uniform,
            ("noised", a) => PolicySpec::Noised(number(a, None)?),
            ("soa", a) => PolicySpec::Soa(number(a, Some(SOA_FRACTION))?),
            _ => {
                return Err(Error::invalid(format!(
                    "unknown policy {s:?} (expected optimal, uniform, noised:EPS or soa[:FRACTION])"
                )))
            }
        };
        match spec {
            PolicySpec::Noised(x) | PolicySpec::Soa(x) if !(0.0..=1.0).contains(&x) => {
                Err(Error::invalid(format!("policy {s:?}: value must lie in [0, 1]")))
            }
            _ => Ok(spec),
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Optimal => f.write_str("optimal"),
            PolicySpec::Uniform => f.write_str("uniform"),
            PolicySpec::Noised(e) => write!(f, "noised:{e}"),
            PolicySpec::Soa(x) => write!(f, "soa:{x}"),
        }
    }
}

impl PolicySpec {
    pub fn build(&self, mdp: &TabularMdp) -> Result<TabularPolicy> {
        let star = || value_iteration(mdp, 1e-10).map(|s| s.policy_star);
        match *self {
            PolicySpec::Optimal => star(),
            PolicySpec::Uniform => Ok(TabularPolicy::uniform(mdp.n_states(), mdp.n_actions())),
            PolicySpec::Noised(eps) => star()?.epsilon_noised(eps),
            PolicySpec::Soa(fraction) => {
                let star = star()?;
                let eps = calibrate_noise(mdp, &star, fraction)?;
                star.epsilon_noised(eps)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shorthand_and_file_forms_agree() {
        let short = EnvSpec::parse("monolith5").unwrap();
        let long = EnvSpec::parse("kind = monolith\nsize = 5  # side\n").unwrap();
        assert_eq!(short, long);
        assert_eq!(short.id(), "monolith5");
        let mdp = short.build().unwrap();
        assert_eq!((mdp.n_states(), mdp.horizon()), (25, 20));
        assert_eq!(EnvSpec::parse(&long.to_spec_string()).unwrap(), long);
    }

    #[test]
    fn overrides_apply() {
        let spec = EnvSpec::parse("kind = chain\nsize = 4\ngamma = 0.5\nhorizon = 3").unwrap();
        let mdp = spec.build().unwrap();
        assert_eq!((mdp.gamma(), mdp.horizon(), mdp.n_actions()), (0.5, 3, 2));
        let r = EnvSpec::parse("kind = random\nsize = 4\nactions = 2\nseed = 9").unwrap();
        assert_eq!(r.build().unwrap().transition_row(0, 0), r.build().unwrap().transition_row(0, 0));
        assert_eq!(EnvSpec::parse(&r.to_spec_string()).unwrap(), r);
    }

    #[test]
    fn malformed_specs_fail() {
        for bad in ["monolith4", "grid5", "monolith", "kind = monolith", "size = 5", "kind = chain\nsize = x"] {
            assert!(EnvSpec::parse(bad).is_err(), "{bad}");
        }
        assert!(matches!(
            EnvSpec::parse("kind = chain\nsize = 4\nwidth = 2"),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn policy_specs() {
        assert_eq!("optimal".parse::<PolicySpec>().unwrap(), PolicySpec::Optimal);
        assert_eq!("noised:0.25".parse::<PolicySpec>().unwrap(), PolicySpec::Noised(0.25));
        assert_eq!("soa".parse::<PolicySpec>().unwrap(), PolicySpec::Soa(SOA_FRACTION));
        for bad in ["noised", "noised:2", "greedy", "uniform:1"] {
            assert!(bad.parse::<PolicySpec>().is_err(), "{bad}");
        }
        let mdp = EnvSpec::parse("bandit2").unwrap().build().unwrap();
        assert_eq!(PolicySpec::Optimal.build(&mdp).unwrap().row(0), &[0.0, 1.0]);
        assert_eq!(PolicySpec::Noised(0.4).build(&mdp).unwrap().row(0), &[0.2, 0.8]);
    }
}
