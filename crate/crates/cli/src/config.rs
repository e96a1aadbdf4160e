//! Run configuration, read from and written to TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vfs_core::model::{ModelConfig, TrainConfig};
use vfs_core::readout::{PropagationConfig, TrackerConfig};
use vfs_core::video::GenSpec;
use vfs_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub corpus: GenSpec,
    pub corpus_clips: usize,
    /// Clip `i` of the corpus is generated from `corpus_seed + i`.
    pub corpus_seed: u64,
    pub eval: GenSpec,
    pub eval_clips: usize,
    pub eval_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            corpus: GenSpec::default(),
            corpus_clips: 200,
            corpus_seed: 0,
            eval: GenSpec {
                num_frames: 20,
                ..GenSpec::default()
            },
            eval_clips: 40,
            eval_seed: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub propagation: PropagationConfig,
    pub tracker: TrackerConfig,
    /// Boundary matching tolerance in pixels.
    pub boundary_tol: usize,
    /// Centre-error threshold of the reported precision, in pixels.
    pub precision_threshold: f64,
    /// Every this many frames of each eval clip enter the embedding probe.
    pub probe_stride: usize,
    /// Embedding spread is also recorded every this many steps (0: only at
    /// the end of training).
    pub std_every: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            propagation: PropagationConfig::default(),
            tracker: TrackerConfig::default(),
            boundary_tol: 1,
            precision_threshold: 5.0,
            probe_stride: 5,
            std_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Checkpoint period in steps (0: only at the end and on failure).
    pub checkpoint_every: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "run".into(),
            seeds: vec![1, 2, 3],
            checkpoint_every: 100,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// SHA-256 of the serialized config, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{:02x}", b)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.data.corpus_clips < self.train.batch_size && self.train.steps > 0 {
            return Err(Error::Config(format!(
                "batch of {} clips needs at least as many corpus clips, got {}",
                self.train.batch_size, self.data.corpus_clips
            )));
        }
        if self.data.eval_clips == 0 || self.eval.probe_stride == 0 {
            return Err(Error::Config("eval_clips and probe_stride must be positive".into()));
        }
        self.model.validate().map_err(as_config)?;
        let b = self.model.intermediate_block;
        let stride: usize = self.model.dense_strides(b)[..=b].iter().product();
        let e = &self.data.eval;
        if !e.height.is_multiple_of(stride) || !e.width.is_multiple_of(stride) {
            return Err(Error::Config(format!(
                "eval frames {}x{} are not a multiple of the feature stride {}",
                e.height, e.width, stride
            )));
        }
        self.train.validate().map_err(as_config)?;
        self.eval.propagation.validate().map_err(as_config)?;
        self.eval.tracker.validate().map_err(as_config)
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}
