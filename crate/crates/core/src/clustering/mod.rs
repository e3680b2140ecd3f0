//! Pseudo-label generation: cosine distances, k-reciprocal Jaccard
//! re-encoding and DBSCAN.

mod dbscan;
mod distance;
mod jaccard;

pub use dbscan::{dbscan, ClusterAssignment};
pub use distance::{cosine_distances, DistanceMatrix};
pub use jaccard::k_reciprocal_jaccard;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringParams {
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_k1")]
    pub k1: usize,
    #[serde(default = "default_k2")]
    pub k2: usize,
    #[serde(default = "default_min_samples")]
    pub min_samples: usize,
}

fn default_eps() -> f64 {
    0.5
}
fn default_k1() -> usize {
    20
}
fn default_k2() -> usize {
    6
}
fn default_min_samples() -> usize {
    2
}

impl Default for ClusteringParams {
    fn default() -> Self {
        Self {
            eps: default_eps(),
            k1: default_k1(),
            k2: default_k2(),
            min_samples: default_min_samples(),
        }
    }
}

/// Full pipeline on unit-norm features. `k1` is clamped to `n - 1` so tiny
/// clients still cluster.
pub fn pseudo_labels(features: ArrayView2<'_, f64>, params: &ClusteringParams) -> Result<ClusterAssignment> {
    let n = features.nrows();
    if n < 2 {
        return Ok(ClusterAssignment::all_outliers(n));
    }
    let base = cosine_distances(features)?;
    let k1 = params.k1.min(n - 1);
    let k2 = params.k2.min(k1);
    let jaccard = k_reciprocal_jaccard(&base, k1, k2)?;
    dbscan(&jaccard, params.eps, params.min_samples)
}
