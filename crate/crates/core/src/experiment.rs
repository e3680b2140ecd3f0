//! End-to-end runs: data, clients, training and the files a run leaves behind.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::{generate, load_feature_file, save_feature_file, ClientDataset};
use crate::error::{Error, Result};
use crate::eval::{MetricsRecord, RankingResult};
use crate::federation::log::LogRecord;
use crate::federation::{
    evaluate_model, run_training, Client, NoopObserver, StageId, TrainingObserver, TrainingOutcome,
};
use crate::model::checkpoint::Checkpoint;
use crate::model::EncoderParams;
use crate::rng::stream;

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

const INIT_TAG: u64 = 0x1217;

pub fn client_file_name(client_id: usize) -> String {
    format!("client_{client_id}.csv")
}

pub fn checkpoint_path(dir: &Path, stage: StageId) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(format!("stage_{stage}.json"))
}

/// Synthetic datasets, or the `client_*.csv` files of `data_dir` ordered by client id.
pub fn load_datasets(cfg: &RunConfig) -> Result<Vec<ClientDataset>> {
    match &cfg.data_dir {
        Some(dir) => load_dataset_dir(dir),
        None => generate(&cfg.data),
    }
}

pub fn load_dataset_dir(dir: &Path) -> Result<Vec<ClientDataset>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("client_") && name.ends_with(".csv") {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::Config(format!("no client_*.csv files in {}", dir.display())));
    }
    let mut datasets = paths.iter().map(|p| load_feature_file(p)).collect::<Result<Vec<_>>>()?;
    datasets.sort_by_key(|d| d.client_id);
    if datasets.windows(2).any(|w| w[0].client_id == w[1].client_id) {
        return Err(Error::Config(format!("duplicate client ids in {}", dir.display())));
    }
    Ok(datasets)
}

/// Writes one CSV per client; returns the paths in client order.
pub fn write_datasets(datasets: &[ClientDataset], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    datasets
        .iter()
        .map(|d| {
            let path = dir.join(client_file_name(d.client_id));
            save_feature_file(d, &path)?;
            Ok(path)
        })
        .collect()
}

/// The shared initial model of a run.
pub fn initial_model(cfg: &RunConfig) -> Result<EncoderParams> {
    EncoderParams::init(cfg.architecture(), &mut stream(cfg.seed, &[INIT_TAG]))
}

/// Clients holding identical initial models, plus each client's training
/// identities for clustering diagnostics.
pub fn build_clients(cfg: &RunConfig, datasets: &[ClientDataset]) -> Result<(Vec<Client>, Vec<Vec<usize>>)> {
    let init = initial_model(cfg)?;
    let adam = cfg.optimizer.adam();
    let mut clients = Vec::with_capacity(datasets.len());
    let mut identities = Vec::with_capacity(datasets.len());
    for d in datasets {
        clients.push(Client::new(
            d.client_id,
            d.training_set(),
            d.eval_set(),
            init.clone(),
            adam,
        )?);
        identities.push(d.train_identities());
    }
    Ok((clients, identities))
}

/// Trains in memory without touching the filesystem.
pub fn run_in_memory(cfg: &RunConfig, observer: &mut dyn TrainingObserver) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let datasets = load_datasets(cfg)?;
    let (clients, identities) = build_clients(cfg, &datasets)?;
    run_training(clients, Some(&identities), &cfg.run_settings()?, observer)
}

/// Convenience wrapper for callers that only need the outcome.
pub fn run(cfg: &RunConfig) -> Result<TrainingOutcome> {
    run_in_memory(cfg, &mut NoopObserver)
}

/// Streams log lines and stage checkpoints into a run directory.
struct DirectoryObserver {
    dir: PathBuf,
    metrics: BufWriter<File>,
}

impl TrainingObserver for DirectoryObserver {
    fn on_record(&mut self, record: &LogRecord) -> Result<()> {
        let path = self.dir.join(METRICS_FILE);
        self.metrics
            .write_all(record.to_json_line().as_bytes())
            .map_err(|e| Error::io(&path, e))
    }

    fn on_stage_end(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        let path = self.dir.join(METRICS_FILE);
        self.metrics.flush().map_err(|e| Error::io(&path, e))?;
        checkpoint.save(&checkpoint_path(&self.dir, checkpoint.stage))
    }
}

/// Runs `cfg` and writes the resolved config, `metrics.jsonl`, one checkpoint
/// per stage and a summary table under `cfg.output_dir`.
pub fn run_to_dir(cfg: &RunConfig) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    let ckpt_dir = dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;

    let metrics_path = dir.join(METRICS_FILE);
    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut observer = DirectoryObserver {
        dir: dir.clone(),
        metrics: BufWriter::new(file),
    };
    let outcome = run_in_memory(cfg, &mut observer)?;
    observer.metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;

    let summary_path = dir.join(SUMMARY_FILE);
    fs::write(&summary_path, summary_table(&outcome)).map_err(|e| Error::io(&summary_path, e))?;
    Ok(outcome)
}

/// Per-client rank-1/5/10 and mAP from the last evaluation, plus the macro average.
pub fn summary_table(outcome: &TrainingOutcome) -> String {
    let ids: Vec<String> = outcome.clients.iter().map(|c| format!("client {}", c.id)).collect();
    metrics_table(&ids, &outcome.final_metrics)
}

pub fn metrics_table(names: &[String], metrics: &[MetricsRecord]) -> String {
    let mut out = String::new();
    let width = names.iter().map(String::len).max().unwrap_or(0).max(7);
    let row = |out: &mut String, name: &str, m: &MetricsRecord| {
        writeln!(
            out,
            "{name:<width$}  {:>6.1}  {:>6.1}  {:>6.1}  {:>6.1}",
            100.0 * m.rank1,
            100.0 * m.rank5,
            100.0 * m.rank10,
            100.0 * m.map
        )
        .expect("String write");
    };
    writeln!(
        out,
        "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}",
        "", "R1", "R5", "R10", "mAP"
    )
    .expect("String write");
    for (name, m) in names.iter().zip(metrics) {
        row(&mut out, name, m);
    }
    row(&mut out, "average", &MetricsRecord::macro_average(metrics));
    out
}

/// Evaluation of one client model from a checkpoint.
#[derive(Debug, Clone)]
pub struct ClientEvaluation {
    pub client_id: usize,
    pub metrics: MetricsRecord,
    pub ranking: RankingResult,
}

/// Evaluates every client of `checkpoint` on its dataset, matched by client id.
pub fn evaluate_checkpoint(checkpoint: &Checkpoint, datasets: &[ClientDataset]) -> Result<Vec<ClientEvaluation>> {
    checkpoint
        .clients
        .iter()
        .map(|state| {
            let dataset = datasets
                .iter()
                .find(|d| d.client_id == state.client_id)
                .ok_or_else(|| Error::InvalidArgument(format!("no dataset for client {}", state.client_id)))?;
            let params = checkpoint.client_model(state.client_id)?;
            let (metrics, ranking) = evaluate_model(&params, &dataset.eval_set(), checkpoint.stage)?;
            Ok(ClientEvaluation {
                client_id: state.client_id,
                metrics,
                ranking,
            })
        })
        .collect()
}
