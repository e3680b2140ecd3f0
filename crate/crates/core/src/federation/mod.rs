//! Global rounds: local client training, stage-dependent aggregation and
//! redistribution across the three-stage schedule.

mod aggregate;
mod client;
pub mod log;
mod runner;
mod schedule;

pub use aggregate::{aggregate_full, aggregate_generic, aggregation_weights, localize};
pub use client::{evaluate_model, stage_embeddings, Client, LocalRound, LocalTraining};
pub use log::{ClientRecord, LogRecord, ServerRecord};
pub use runner::{run_training, NoopObserver, RunSettings, TrainingObserver, TrainingOutcome};
pub use schedule::{Ablation, Aggregation, LossMode, StageConfig, StageId, StageSchedule};
