//! Client datasets: synthetic non-IID generation, CSV feature files and the
//! query/gallery split.

mod feature_file;
mod split;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use feature_file::{load_feature_file, save_feature_file};
pub use split::{assign_eval_split, split_eval};
pub use synthetic::{generate, SyntheticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "gallery" => Ok(Split::Gallery),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// One image: `parts` segments of `input_dim` features stored contiguously by
/// strip, plus ground-truth ids that only evaluation may read.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub features: Vec<f64>,
    pub identity_id: usize,
    pub camera_id: usize,
    pub split: Split,
}

/// Ground-truth metadata for one evaluation image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageMeta {
    pub identity_id: usize,
    pub camera_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub feature_dim: usize,
    pub records: Vec<Record>,
}

/// Unlabeled training inputs: the only view of a dataset the trainer sees.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    features: Array2<f64>,
}

impl TrainingSet {
    pub fn new(features: Array2<f64>) -> Self {
        Self { features }
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }
}

/// Query and gallery features with their metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub query: Array2<f64>,
    pub query_meta: Vec<ImageMeta>,
    pub gallery: Array2<f64>,
    pub gallery_meta: Vec<ImageMeta>,
}

impl ClientDataset {
    pub fn new(client_id: usize, feature_dim: usize) -> Self {
        Self {
            client_id,
            feature_dim,
            records: Vec::new(),
        }
    }

    fn matrix<'a>(&self, records: impl Iterator<Item = &'a Record>) -> Array2<f64> {
        let rows: Vec<&Record> = records.collect();
        Array2::from_shape_fn((rows.len(), self.feature_dim), |(i, j)| rows[i].features[j])
    }

    fn with_split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.with_split(split).count()
    }

    /// Training features with identities stripped.
    pub fn training_set(&self) -> TrainingSet {
        TrainingSet::new(self.matrix(self.with_split(Split::Train)))
    }

    /// Identity ids of the training records, for clustering diagnostics only.
    pub fn train_identities(&self) -> Vec<usize> {
        self.with_split(Split::Train).map(|r| r.identity_id).collect()
    }

    pub fn eval_set(&self) -> EvalSet {
        let meta = |split| {
            self.with_split(split)
                .map(|r| ImageMeta {
                    identity_id: r.identity_id,
                    camera_id: r.camera_id,
                })
                .collect()
        };
        EvalSet {
            query: self.matrix(self.with_split(Split::Query)),
            query_meta: meta(Split::Query),
            gallery: self.matrix(self.with_split(Split::Gallery)),
            gallery_meta: meta(Split::Gallery),
        }
    }
}
