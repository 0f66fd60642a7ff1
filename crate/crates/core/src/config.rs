//! JSON experiment schema and the resolved command-line run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::{Algorithm, TrainConfig};
use crate::env::PointEnvConfig;
use crate::error::{Error, Result};
use crate::estimators::BoundHyper;

/// Environment variable that caps the rollout worker count.
pub const THREADS_ENV: &str = "ASCPO_LAB_THREADS";

/// Algorithm and seed grid for `compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { algorithms: vec![Algorithm::Ascpo, Algorithm::Trpo], seeds: vec![0, 1, 2] }
    }
}

/// Top-level JSON document: `env`, `train`, `hyper` and optionally `compare`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: PointEnvConfig,
    pub train: TrainConfig,
    pub hyper: BoundHyper,
    pub compare: CompareConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config schema: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        self.hyper.validate()?;
        if self.compare.algorithms.is_empty() || self.compare.seeds.is_empty() {
            return Err(Error::Config("compare: algorithms and seeds must be non-empty".into()));
        }
        Ok(())
    }

    pub fn defaults_json() -> String {
        serde_json::to_string_pretty(&Self::default()).expect("default config serialises")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Train,
    Eval,
    Verify,
    Compare,
}

/// What one CLI invocation should do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

/// Worker count after applying the thread cap; the cap is ignored when
/// unparsable or zero.
pub fn capped_workers(requested: usize, cap: Option<&str>) -> usize {
    let cap = cap.and_then(|c| c.trim().parse::<usize>().ok()).filter(|&c| c > 0);
    match cap {
        Some(c) => requested.min(c).max(1),
        None => requested.max(1),
    }
}

impl RunConfig {
    /// Loads the experiment file (or defaults) and applies seed and worker
    /// overrides. `thread_cap` is the value of [`THREADS_ENV`], if set.
    pub fn resolve(&self, thread_cap: Option<&str>) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config_path {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(w) = self.workers {
            if w == 0 {
                return Err(Error::Config("--workers must be >= 1".into()));
            }
            cfg.train.workers = w;
        }
        cfg.train.workers = capped_workers(cfg.train.workers, thread_cap);
        cfg.validate()?;
        Ok(cfg)
    }
}
