//! Run configuration: one TOML file holding data, model, schedule, clustering,
//! memory and optimizer settings. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::ClusteringParams;
use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::federation::{Ablation, LocalTraining, RunSettings, StageConfig, StageSchedule};
use crate::memory::MemoryParams;
use crate::model::Architecture;
use crate::optim::AdamParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "d_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "d_embed")]
    pub embed_dim: usize,
    #[serde(default = "d_bn_eps")]
    pub bn_eps: f64,
    #[serde(default = "d_bn_momentum")]
    pub bn_momentum: f64,
}

fn d_hidden() -> usize {
    64
}
fn d_embed() -> usize {
    32
}
fn d_bn_eps() -> f64 {
    1e-5
}
fn d_bn_momentum() -> f64 {
    0.1
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: d_hidden(),
            embed_dim: d_embed(),
            bn_eps: d_bn_eps(),
            bn_momentum: d_bn_momentum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_adam_eps")]
    pub eps: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
}

fn d_lr() -> f64 {
    AdamParams::default().lr
}
fn d_beta1() -> f64 {
    AdamParams::default().beta1
}
fn d_beta2() -> f64 {
    AdamParams::default().beta2
}
fn d_adam_eps() -> f64 {
    AdamParams::default().eps
}

fn d_batch() -> usize {
    64
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: d_lr(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            eps: d_adam_eps(),
            batch_size: d_batch(),
        }
    }
}

impl OptimizerConfig {
    pub fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Explicit stage list; when absent the ablation preset decides.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<Vec<StageConfig>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_workers")]
    pub workers: usize,
    #[serde(default = "d_eval_interval")]
    pub eval_interval: usize,
    #[serde(default = "d_output_dir")]
    pub output_dir: PathBuf,
    /// Directory of `client_*.csv` feature files; synthetic data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "d_ablation")]
    pub ablation: Ablation,
    /// Replaces the round count of every stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds_override: Option<usize>,
    #[serde(default)]
    pub data: SyntheticConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub clustering: ClusteringParams,
    #[serde(default)]
    pub memory: MemoryParams,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

fn d_workers() -> usize {
    1
}
fn d_eval_interval() -> usize {
    1
}
fn d_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}
fn d_ablation() -> Ablation {
    Ablation::Full
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: d_workers(),
            eval_interval: d_eval_interval(),
            output_dir: d_output_dir(),
            data_dir: None,
            ablation: d_ablation(),
            rounds_override: None,
            data: SyntheticConfig::default(),
            model: ModelConfig::default(),
            schedule: ScheduleConfig::default(),
            clustering: ClusteringParams::default(),
            memory: MemoryParams::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.data.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// The fully resolved configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.data.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval_interval must be >= 1".into()));
        }
        if self.rounds_override == Some(0) {
            return Err(Error::Config("rounds_override must be >= 1".into()));
        }
        if self.optimizer.batch_size < 2 {
            return Err(Error::Config("optimizer.batch_size must be >= 2".into()));
        }
        if self.clustering.k1 == 0 || self.clustering.min_samples == 0 {
            return Err(Error::Config(
                "clustering.k1 and clustering.min_samples must be >= 1".into(),
            ));
        }
        if !(self.clustering.eps >= 0.0 && self.clustering.eps.is_finite()) {
            return Err(Error::Config("clustering.eps must be a finite value >= 0".into()));
        }
        self.data.validate()?;
        self.architecture().validate()?;
        self.memory.validate()?;
        self.optimizer.adam().validate()?;
        self.schedule()?;
        Ok(())
    }

    /// Encoder architecture; input width and strip count come from the data section.
    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.data.input_dim,
            hidden_dim: self.model.hidden_dim,
            embed_dim: self.model.embed_dim,
            parts: self.data.parts,
            bn_eps: self.model.bn_eps,
            bn_momentum: self.model.bn_momentum,
        }
    }

    pub fn schedule(&self) -> Result<StageSchedule> {
        let base = match &self.schedule.stages {
            Some(stages) => StageSchedule::new(stages.clone())?,
            None => self.ablation.schedule(),
        };
        match self.rounds_override {
            Some(r) => base.with_rounds(r),
            None => Ok(base),
        }
    }

    pub fn local_training(&self) -> LocalTraining {
        LocalTraining {
            clustering: self.clustering,
            memory: self.memory,
            adam: self.optimizer.adam(),
            batch_size: self.optimizer.batch_size,
        }
    }

    pub fn run_settings(&self) -> Result<RunSettings> {
        Ok(RunSettings {
            schedule: self.schedule()?,
            local: self.local_training(),
            seed: self.seed,
            workers: self.workers,
            eval_interval: self.eval_interval,
        })
    }
}
