//! Federated unsupervised cluster-contrastive learning on a small encoder.
//!
//! Clients hold unlabeled multi-part feature records. Each global round a
//! client clusters its own embeddings (k-reciprocal Jaccard distance +
//! DBSCAN), builds a centroid memory and trains with an InfoNCE objective.
//! The server averages parameters weighted by client size. Training runs in
//! up to three stages: full aggregation, aggregation of non-batch-norm
//! parameters only, and the same with an added per-strip patch loss.

pub mod classifier;
pub mod clustering;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod federation;
pub mod memory;
pub mod model;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
pub use model::{Architecture, EncoderParams, Mode, ParamPartition};
