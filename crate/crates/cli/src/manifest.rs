//! `manifest.json`: every emitted file with its hash, plus per-stage status.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::config::RunConfig;
use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    /// Hash of the configuration and input artifacts this file was made from.
    pub inputs: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFailure {
    pub task: String,
    pub code: i32,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub seconds: f64,
    pub tasks: usize,
    pub skipped: usize,
    pub failures: Vec<TaskFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub software_version: String,
    pub config: RunConfig,
    pub master_seed: u64,
    pub stages: BTreeMap<String, StageRecord>,
    /// Relative path to entry; paths use `/` separators.
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Local (delta) coefficient of each extracted kernel, by kernel path.
    #[serde(default)]
    pub local_coefficients: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            master_seed: config.master_seed,
            stages: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            alpha: None,
            local_coefficients: BTreeMap::new(),
        }
    }

    /// Load the manifest in `out`, or start a fresh one when there is none.
    /// The stored configuration is replaced by `config`; artifact entries are
    /// kept because their input keys decide what is still current.
    pub fn load_or_new(out: &Path, config: &RunConfig) -> Result<Self> {
        let path = out.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(config));
        }
        let mut m: Manifest = artifact::read_json(&path)?;
        m.config = config.clone();
        m.master_seed = config.master_seed;
        m.software_version = env!("CARGO_PKG_VERSION").to_string();
        Ok(m)
    }

    pub fn save(&self, out: &Path) -> Result<String> {
        artifact::write_json(&out.join(MANIFEST_FILE), self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig::default();
        let mut m = Manifest::new(&config);
        m.artifacts.insert(
            "a/b.csv".into(),
            ArtifactEntry { sha256: "00".into(), inputs: "11".into(), seed: Some(3) },
        );
        m.stages.insert("build".into(), StageRecord { seconds: 1.5, tasks: 2, skipped: 1, failures: vec![] });
        m.save(dir.path()).unwrap();
        assert_eq!(Manifest::load_or_new(dir.path(), &config).unwrap(), m);
    }
}
