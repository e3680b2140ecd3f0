use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{LossMode, StageConfig, StageId};
use crate::classifier::ClassifierHead;
use crate::clustering::{pseudo_labels, ClusterAssignment, ClusteringParams};
use crate::data::{EvalSet, TrainingSet};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsRecord, RankingResult};
use crate::memory::{contrastive_batch_loss, CentroidMemory, MemoryParams};
use crate::model::{backward, forward, EncoderParams, ForwardOutput, Mode};
use crate::optim::{Adam, AdamParams};

/// Hyper-parameters of one client's local round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTraining {
    pub clustering: ClusteringParams,
    pub memory: MemoryParams,
    pub adam: AdamParams,
    pub batch_size: usize,
}

impl Default for LocalTraining {
    fn default() -> Self {
        Self {
            clustering: ClusteringParams::default(),
            memory: MemoryParams::default(),
            adam: AdamParams::default(),
            batch_size: 64,
        }
    }
}

/// One participant: its unlabeled training inputs, its held-out evaluation
/// set and its current local model.
#[derive(Debug, Clone)]
pub struct Client {
    pub id: usize,
    train: TrainingSet,
    eval: EvalSet,
    pub params: EncoderParams,
    optimizer: Adam,
}

/// What one client did in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalRound {
    pub clusters: usize,
    pub outliers: usize,
    /// Mean batch loss of each local epoch; empty when the round was skipped.
    pub epoch_losses: Vec<f64>,
    pub skipped: bool,
    pub assignment: ClusterAssignment,
}

impl LocalRound {
    pub fn mean_loss(&self) -> Option<f64> {
        (!self.epoch_losses.is_empty()).then(|| self.epoch_losses.iter().sum::<f64>() / self.epoch_losses.len() as f64)
    }
}

/// Embeddings used for clustering and retrieval in `stage`.
pub fn stage_embeddings(out: &ForwardOutput, stage: StageId) -> Array2<f64> {
    if stage.uses_concatenated_features() {
        out.concatenated()
    } else {
        out.holistic.clone()
    }
}

impl Client {
    pub fn new(id: usize, train: TrainingSet, eval: EvalSet, params: EncoderParams, adam: AdamParams) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidArgument(format!("client {id} has no training images")));
        }
        if train.features().ncols() != params.arch().record_dim() {
            return Err(Error::Shape(format!(
                "client {id} features have width {}, model expects {}",
                train.features().ncols(),
                params.arch().record_dim()
            )));
        }
        let optimizer = Adam::new(adam, params.as_flat().len());
        Ok(Self {
            id,
            train,
            eval,
            params,
            optimizer,
        })
    }

    /// `n^k`, the number of training images.
    pub fn num_images(&self) -> usize {
        self.train.len()
    }

    pub fn reset_optimizer(&mut self, adam: AdamParams) {
        self.optimizer = Adam::new(adam, self.params.as_flat().len());
    }

    /// Eval-mode forward over all training images.
    pub fn extract(&self) -> Result<ForwardOutput> {
        forward(&self.params, self.train.features().view(), Mode::Eval)
    }

    /// Retrieval metrics of the current model on the client's query/gallery split.
    pub fn evaluate(&self, stage: StageId) -> Result<(MetricsRecord, RankingResult)> {
        evaluate_model(&self.params, &self.eval, stage)
    }

    /// Cluster, build the memory, then run `E_s` local epochs.
    pub fn local_round<R: Rng>(&mut self, stage: &StageConfig, cfg: &LocalTraining, rng: &mut R) -> Result<LocalRound> {
        let extracted = self.extract()?;
        let features = stage_embeddings(&extracted, stage.stage);
        let assignment = pseudo_labels(features.view(), &cfg.clustering)?;
        let clusters = assignment.num_clusters();
        let outliers = assignment.num_outliers();
        if clusters == 0 {
            return Ok(LocalRound {
                clusters,
                outliers,
                epoch_losses: Vec::new(),
                skipped: true,
                assignment,
            });
        }

        let loss_mode = stage.loss();
        let mut objective = match loss_mode {
            LossMode::CrossEntropy => Objective::Classifier(ClassifierHead::init(
                clusters,
                self.params.arch().embed_dim,
                cfg.adam,
                rng,
            )),
            LossMode::Holistic | LossMode::HolisticPlusPatch => {
                let patches: Vec<_> = if loss_mode == LossMode::HolisticPlusPatch {
                    extracted.patches.iter().map(|p| p.view()).collect()
                } else {
                    Vec::new()
                };
                Objective::Memory(CentroidMemory::init(
                    extracted.holistic.view(),
                    &patches,
                    &assignment,
                    cfg.memory,
                )?)
            }
        };

        let mut pool: Vec<(usize, usize)> = assignment
            .labels()
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|c| (i, c)))
            .collect();
        let batch_size = cfg.batch_size.min(pool.len()).max(1);
        let mask = self.params.layout().trainable_mask();
        let mut epoch_losses = Vec::with_capacity(stage.local_epochs);
        for _ in 0..stage.local_epochs {
            pool.shuffle(rng);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in pool.chunks(batch_size) {
                if chunk.len() < 2 {
                    continue;
                }
                let idx: Vec<usize> = chunk.iter().map(|c| c.0).collect();
                let labels: Vec<usize> = chunk.iter().map(|c| c.1).collect();
                let batch = self.train.features().select(Axis(0), &idx);
                let out = forward(&self.params, batch.view(), Mode::Train)?;
                let (loss, grad_holistic, grad_patches) = match &mut objective {
                    Objective::Memory(memory) => {
                        let with_patch = loss_mode == LossMode::HolisticPlusPatch;
                        let bl = contrastive_batch_loss(&out, &labels, memory, with_patch)?;
                        (bl.loss, bl.grad_holistic, bl.grad_patches)
                    }
                    Objective::Classifier(head) => {
                        let ce = head.loss(out.holistic.view(), &labels)?;
                        head.step(&ce.grad_head)?;
                        let zeros = vec![Array2::zeros(out.holistic.dim()); out.patches.len()];
                        (ce.loss, ce.grad_features, zeros)
                    }
                };
                if !loss.is_finite() {
                    return Err(Error::NonFinite("training loss".into()));
                }
                let gp: Vec<_> = grad_patches.iter().map(|g| g.view()).collect();
                let grad = backward(&self.params, &out.cache, grad_holistic.view(), &gp)?;
                self.optimizer.step(self.params.as_flat_mut(), &grad, Some(&mask))?;
                if self.params.as_flat().iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("parameters after optimizer step".into()));
                }
                if let Some(update) = &out.bn_update {
                    self.params.apply_bn_update(update);
                }
                if let Objective::Memory(memory) = &mut objective {
                    memory.update_from_batch(&out, &labels)?;
                }
                total += loss;
                batches += 1;
            }
            if batches > 0 {
                epoch_losses.push(total / batches as f64);
            }
        }
        Ok(LocalRound {
            clusters,
            outliers,
            epoch_losses,
            skipped: false,
            assignment,
        })
    }
}

enum Objective {
    Memory(CentroidMemory),
    Classifier(ClassifierHead),
}

/// Evaluates `params` on an evaluation split with the stage's embedding.
pub fn evaluate_model(
    params: &EncoderParams,
    eval: &EvalSet,
    stage: StageId,
) -> Result<(MetricsRecord, RankingResult)> {
    if eval.query.nrows() == 0 || eval.gallery.nrows() == 0 {
        return Ok((MetricsRecord::default(), RankingResult::default()));
    }
    let q = stage_embeddings(&forward(params, eval.query.view(), Mode::Eval)?, stage);
    let g = stage_embeddings(&forward(params, eval.gallery.view(), Mode::Eval)?, stage);
    evaluate(q.view(), g.view(), &eval.query_meta, &eval.gallery_meta)
}
