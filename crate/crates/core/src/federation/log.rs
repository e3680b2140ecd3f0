//! Metrics log records, written one JSON object per line.
//!
//! Schema version 1. Every round produces one `client` record per client (in
//! client-id order) followed by one `server` record.

use serde::{Deserialize, Serialize};

use super::StageId;
use crate::eval::{ClusterQuality, MetricsRecord};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub schema: u32,
    pub stage: StageId,
    /// 1-based round within the stage.
    pub round: usize,
    /// 1-based round across the whole run.
    pub global_round: usize,
    pub client: usize,
    pub images: usize,
    pub clusters: usize,
    pub outliers: usize,
    pub skipped: bool,
    pub loss: Option<f64>,
    pub epoch_losses: Vec<f64>,
    /// Pseudo-label quality against hidden identities; diagnostics only.
    pub cluster_quality: Option<ClusterQuality>,
    pub metrics: Option<MetricsRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerRecord {
    pub schema: u32,
    pub stage: StageId,
    pub round: usize,
    pub global_round: usize,
    pub clients: usize,
    pub total_images: usize,
    pub mean_loss: Option<f64>,
    pub macro_metrics: Option<MetricsRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Client(ClientRecord),
    Server(ServerRecord),
}

impl LogRecord {
    pub fn to_json_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("log records serialise");
        s.push('\n');
        s
    }
}

/// Parses a JSONL metrics log.
pub fn parse_log(text: &str) -> crate::Result<Vec<LogRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Into::into))
        .collect()
}
