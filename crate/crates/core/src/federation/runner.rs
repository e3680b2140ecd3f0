use rayon::prelude::*;

use super::aggregate::{aggregate_full, aggregate_generic, localize};
use super::client::{Client, LocalRound, LocalTraining};
use super::log::{ClientRecord, LogRecord, ServerRecord, SCHEMA_VERSION};
use super::schedule::{Aggregation, StageConfig, StageId, StageSchedule};
use crate::error::{Error, Result};
use crate::eval::{clustering_quality, MetricsRecord};
use crate::model::checkpoint::Checkpoint;
use crate::model::EncoderParams;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub schedule: StageSchedule,
    pub local: LocalTraining,
    pub seed: u64,
    /// Upper bound on clients trained concurrently; results do not depend on it.
    pub workers: usize,
    /// Evaluate every `eval_interval` rounds and always on a stage's last round.
    pub eval_interval: usize,
}

/// Hooks into the training loop. All methods default to no-ops.
pub trait TrainingObserver {
    fn on_record(&mut self, _record: &LogRecord) -> Result<()> {
        Ok(())
    }

    /// Client models just before and just after a redistribution.
    fn on_redistribute(&mut self, _stage: StageId, _round: usize, _before: &[EncoderParams], _after: &[EncoderParams]) {
    }

    fn on_stage_end(&mut self, _checkpoint: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

pub struct NoopObserver;

impl TrainingObserver for NoopObserver {}

#[derive(Debug)]
pub struct TrainingOutcome {
    pub clients: Vec<Client>,
    pub checkpoints: Vec<Checkpoint>,
    pub records: Vec<LogRecord>,
    /// Per-client metrics from the last evaluated round.
    pub final_metrics: Vec<MetricsRecord>,
}

impl TrainingOutcome {
    pub fn final_macro(&self) -> MetricsRecord {
        MetricsRecord::macro_average(&self.final_metrics)
    }

    /// Macro metrics of every evaluated round of `stage`, in round order.
    pub fn macro_curve(&self, stage: StageId) -> Vec<MetricsRecord> {
        self.records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Server(s) if s.stage == stage => s.macro_metrics,
                _ => None,
            })
            .collect()
    }

    pub fn metrics_log(&self) -> String {
        self.records.iter().map(LogRecord::to_json_line).collect()
    }
}

fn stage_tag(stage: StageId) -> u64 {
    match stage {
        StageId::Backbone => 0,
        StageId::I => 1,
        StageId::II => 2,
        StageId::III => 3,
    }
}

fn checkpoint(stage: StageId, clients: &[Client]) -> Result<Checkpoint> {
    let entries: Vec<_> = clients.iter().map(|c| (c.id, c.num_images(), &c.params)).collect();
    Checkpoint::from_clients(stage, &entries)
}

/// Runs every stage of the schedule.
///
/// Each round all clients train locally (in parallel, bounded by
/// `settings.workers`), the server aggregates per the stage's mode and the
/// result is redistributed: a full replacement under [`Aggregation::Full`],
/// localisation under [`Aggregation::GenericOnly`]. `identities`, when given,
/// only feed the clustering diagnostics in the log.
pub fn run_training(
    mut clients: Vec<Client>,
    identities: Option<&[Vec<usize>]>,
    settings: &RunSettings,
    observer: &mut dyn TrainingObserver,
) -> Result<TrainingOutcome> {
    if clients.is_empty() {
        return Err(Error::InvalidArgument("no clients".into()));
    }
    if settings.eval_interval == 0 {
        return Err(Error::Config("eval_interval must be >= 1".into()));
    }
    settings.local.memory.validate()?;
    settings.local.adam.validate()?;
    if settings.local.batch_size < 2 {
        return Err(Error::Config("batch_size must be >= 2".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let sizes: Vec<usize> = clients.iter().map(Client::num_images).collect();
    let total_images: usize = sizes.iter().sum();
    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    let mut final_metrics = Vec::new();
    let mut global_round = 0;

    let emit = |record: LogRecord, records: &mut Vec<LogRecord>, observer: &mut dyn TrainingObserver| {
        observer.on_record(&record)?;
        records.push(record);
        Ok::<_, Error>(())
    };

    for stage_cfg in settings.schedule.stages() {
        let StageConfig {
            stage, global_rounds, ..
        } = *stage_cfg;
        for c in &mut clients {
            c.reset_optimizer(settings.local.adam);
        }
        for round in 1..=global_rounds {
            global_round += 1;
            let local = &settings.local;
            let results: Vec<Result<LocalRound>> = pool.install(|| {
                clients
                    .par_iter_mut()
                    .map(|c| {
                        let mut rng = stream(settings.seed, &[stage_tag(stage), round as u64, c.id as u64]);
                        c.local_round(stage_cfg, local, &mut rng)
                    })
                    .collect()
            });
            let mut reports = Vec::with_capacity(clients.len());
            for (c, r) in clients.iter().zip(results) {
                match r {
                    Ok(rep) => reports.push(rep),
                    Err(Error::NonFinite(_)) => {
                        return Err(Error::NonFiniteLoss {
                            client: c.id,
                            stage: stage.to_string(),
                            round,
                        })
                    }
                    Err(e) => return Err(e),
                }
            }

            let before: Vec<EncoderParams> = clients.iter().map(|c| c.params.clone()).collect();
            match stage.aggregation() {
                Aggregation::Full => {
                    let pairs: Vec<_> = clients.iter().map(|c| (&c.params, c.num_images())).collect();
                    let global = aggregate_full(&pairs)?;
                    for c in &mut clients {
                        c.params = global.clone();
                    }
                }
                Aggregation::GenericOnly => {
                    let generics: Vec<Vec<f64>> = clients.iter().map(|c| c.params.partition().generic).collect();
                    let pairs: Vec<_> = generics
                        .iter()
                        .zip(&clients)
                        .map(|(g, c)| (g.as_slice(), c.num_images()))
                        .collect();
                    let global = aggregate_generic(&pairs)?;
                    for c in &mut clients {
                        c.params = localize(&global, &c.params)?;
                    }
                }
            }
            let after: Vec<EncoderParams> = clients.iter().map(|c| c.params.clone()).collect();
            observer.on_redistribute(stage, round, &before, &after);

            let evaluate_now = round % settings.eval_interval == 0 || round == global_rounds;
            let metrics: Vec<Option<MetricsRecord>> = if evaluate_now {
                let evals: Vec<Result<MetricsRecord>> =
                    pool.install(|| clients.par_iter().map(|c| c.evaluate(stage).map(|(m, _)| m)).collect());
                let evals = evals.into_iter().collect::<Result<Vec<_>>>()?;
                final_metrics = evals.clone();
                evals.into_iter().map(Some).collect()
            } else {
                vec![None; clients.len()]
            };

            for (k, (c, rep)) in clients.iter().zip(&reports).enumerate() {
                let cluster_quality = match identities {
                    Some(ids) => Some(clustering_quality(&rep.assignment, &ids[k])?),
                    None => None,
                };
                let record = LogRecord::Client(ClientRecord {
                    schema: SCHEMA_VERSION,
                    stage,
                    round,
                    global_round,
                    client: c.id,
                    images: c.num_images(),
                    clusters: rep.clusters,
                    outliers: rep.outliers,
                    skipped: rep.skipped,
                    loss: rep.mean_loss(),
                    epoch_losses: rep.epoch_losses.clone(),
                    cluster_quality,
                    metrics: metrics[k],
                });
                emit(record, &mut records, observer)?;
            }
            let losses: Vec<f64> = reports.iter().filter_map(LocalRound::mean_loss).collect();
            let server = LogRecord::Server(ServerRecord {
                schema: SCHEMA_VERSION,
                stage,
                round,
                global_round,
                clients: clients.len(),
                total_images,
                mean_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
                macro_metrics: evaluate_now
                    .then(|| MetricsRecord::macro_average(&metrics.iter().flatten().copied().collect::<Vec<_>>())),
            });
            emit(server, &mut records, observer)?;
        }
        let ckpt = checkpoint(stage, &clients)?;
        observer.on_stage_end(&ckpt)?;
        checkpoints.push(ckpt);
    }

    Ok(TrainingOutcome {
        clients,
        checkpoints,
        records,
        final_metrics,
    })
}
