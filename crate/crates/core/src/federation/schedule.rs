use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training stage. `Backbone` is the cross-entropy ablation baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageId {
    #[serde(rename = "backbone")]
    Backbone,
    I,
    II,
    III,
}

impl StageId {
    pub fn as_str(self) -> &'static str {
        match self {
            StageId::Backbone => "backbone",
            StageId::I => "I",
            StageId::II => "II",
            StageId::III => "III",
        }
    }

    pub fn aggregation(self) -> Aggregation {
        match self {
            StageId::Backbone | StageId::I => Aggregation::Full,
            StageId::II | StageId::III => Aggregation::GenericOnly,
        }
    }

    pub fn loss(self) -> LossMode {
        match self {
            StageId::Backbone => LossMode::CrossEntropy,
            StageId::I | StageId::II => LossMode::Holistic,
            StageId::III => LossMode::HolisticPlusPatch,
        }
    }

    /// Stage III clusters and evaluates on `[u ; q_1 ; … ; q_p]`.
    pub fn uses_concatenated_features(self) -> bool {
        self == StageId::III
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backbone" => Ok(StageId::Backbone),
            "I" => Ok(StageId::I),
            "II" => Ok(StageId::II),
            "III" => Ok(StageId::III),
            other => Err(Error::Config(format!("unknown stage `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Every parameter, batch-norm state included, is averaged.
    Full,
    /// Only generic parameters are averaged; batch-norm state stays local.
    GenericOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Holistic,
    HolisticPlusPatch,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub stage: StageId,
    pub local_epochs: usize,
    pub global_rounds: usize,
}

impl StageConfig {
    pub fn aggregation(&self) -> Aggregation {
        self.stage.aggregation()
    }

    pub fn loss(&self) -> LossMode {
        self.stage.loss()
    }
}

/// Ordered stages; aggregation and loss follow from each stage id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSchedule {
    stages: Vec<StageConfig>,
}

impl StageSchedule {
    pub fn new(stages: Vec<StageConfig>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Config("schedule has no stages".into()));
        }
        for s in &stages {
            if s.local_epochs == 0 || s.global_rounds == 0 {
                return Err(Error::Config(format!(
                    "stage {} needs local_epochs >= 1 and global_rounds >= 1",
                    s.stage
                )));
            }
        }
        Ok(Self { stages })
    }

    pub fn stages(&self) -> &[StageConfig] {
        &self.stages
    }

    /// Replaces every stage's round count.
    pub fn with_rounds(&self, rounds: usize) -> Result<Self> {
        Self::new(
            self.stages
                .iter()
                .map(|s| StageConfig {
                    global_rounds: rounds,
                    ..*s
                })
                .collect(),
        )
    }

    pub fn total_rounds(&self) -> usize {
        self.stages.iter().map(|s| s.global_rounds).sum()
    }
}

/// Ablation presets, one per row of the usual ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    Backbone,
    Stage1,
    Stage12,
    Stage13,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Backbone,
        Ablation::Stage1,
        Ablation::Stage12,
        Ablation::Stage13,
        Ablation::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Backbone => "backbone",
            Ablation::Stage1 => "stage1",
            Ablation::Stage12 => "stage12",
            Ablation::Stage13 => "stage13",
            Ablation::Full => "full",
        }
    }

    /// Default schedule: one local epoch for 100 rounds in stage I, five local
    /// epochs for 100 rounds in every later stage and in the baseline.
    pub fn schedule(self) -> StageSchedule {
        let stage = |stage, local_epochs| StageConfig {
            stage,
            local_epochs,
            global_rounds: 100,
        };
        let stages = match self {
            Ablation::Backbone => vec![stage(StageId::Backbone, 5)],
            Ablation::Stage1 => vec![stage(StageId::I, 1)],
            Ablation::Stage12 => vec![stage(StageId::I, 1), stage(StageId::II, 5)],
            Ablation::Stage13 => vec![stage(StageId::I, 1), stage(StageId::III, 5)],
            Ablation::Full => vec![stage(StageId::I, 1), stage(StageId::II, 5), stage(StageId::III, 5)],
        };
        StageSchedule::new(stages).expect("presets are valid")
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}
