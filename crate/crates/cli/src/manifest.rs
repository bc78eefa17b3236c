use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Provenance of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub args: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            args: std::env::args().skip(1).collect(),
        }
    }

    pub fn input(mut self, p: impl AsRef<Path>) -> Self {
        self.inputs.push(p.as_ref().display().to_string());
        self
    }

    pub fn output(mut self, p: impl AsRef<Path>) -> Self {
        self.outputs.push(p.as_ref().display().to_string());
        self
    }
}

/// The single manifest of an artifact directory: runs keyed by their
/// primary output, so re-running a command replaces its own entry.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct DirManifest {
    pub runs: BTreeMap<String, RunManifest>,
}

pub fn record(dir: &Path, key: &str, run: RunManifest) -> Result<PathBuf, CliError> {
    let path = dir.join(MANIFEST_NAME);
    let mut manifest: DirManifest = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
        Err(_) => DirManifest::default(),
    };
    manifest.runs.insert(key.to_string(), run);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| uges::Error::io(&path, e))?;
    Ok(path)
}
