//! Centroid memory and the cluster-contrastive losses.
//!
//! The memory holds one unit-norm centroid per pseudo-label cluster, plus one
//! bank per strip index for patch features. Centroids start as normalised
//! cluster means and are pulled towards each training query with momentum.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::model::ForwardOutput;

const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryParams {
    /// Softmax temperature.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Weight kept by the old centroid on each momentum update.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_tau() -> f64 {
    0.05
}
fn default_lambda() -> f64 {
    0.2
}

impl Default for MemoryParams {
    fn default() -> Self {
        Self {
            tau: default_tau(),
            lambda: default_lambda(),
        }
    }
}

impl MemoryParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument("tau must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument("lambda must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidMemory {
    holistic: Array2<f64>,
    patches: Vec<Array2<f64>>,
    params: MemoryParams,
}

fn normalize_in_place(mut row: ndarray::ArrayViewMut1<'_, f64>) -> f64 {
    let norm = row.dot(&row).sqrt();
    if norm > ZERO_NORM {
        row.mapv_inplace(|v| v / norm);
    }
    norm
}

fn cluster_means(features: ArrayView2<'_, f64>, assignment: &ClusterAssignment) -> Result<Array2<f64>> {
    let m = assignment.num_clusters();
    let mut sums = Array2::<f64>::zeros((m, features.ncols()));
    let mut counts = vec![0usize; m];
    for (i, label) in assignment.labels().iter().enumerate() {
        if let Some(j) = *label {
            sums.row_mut(j).scaled_add(1.0, &features.row(i));
            counts[j] += 1;
        }
    }
    for (j, mut row) in sums.rows_mut().into_iter().enumerate() {
        if counts[j] == 0 {
            return Err(Error::InvalidArgument(format!("cluster {j} has no members")));
        }
        row.mapv_inplace(|v| v / counts[j] as f64);
        if normalize_in_place(row) <= ZERO_NORM {
            return Err(Error::DegenerateCluster { cluster: j });
        }
    }
    Ok(sums)
}

impl CentroidMemory {
    /// Normalised per-cluster means of `holistic` (and of every patch bank in
    /// `patches`). Outliers contribute to no centroid.
    pub fn init(
        holistic: ArrayView2<'_, f64>,
        patches: &[ArrayView2<'_, f64>],
        assignment: &ClusterAssignment,
        params: MemoryParams,
    ) -> Result<Self> {
        params.validate()?;
        if assignment.num_clusters() == 0 {
            return Err(Error::InvalidArgument("no clusters to build a memory from".into()));
        }
        let n = assignment.len();
        if holistic.nrows() != n || patches.iter().any(|p| p.nrows() != n) {
            return Err(Error::Shape(format!("feature rows do not match {n} assignment labels")));
        }
        Ok(Self {
            holistic: cluster_means(holistic, assignment)?,
            patches: patches
                .iter()
                .map(|p| cluster_means(*p, assignment))
                .collect::<Result<_>>()?,
            params,
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.holistic.nrows()
    }

    pub fn params(&self) -> MemoryParams {
        self.params
    }

    pub fn holistic(&self) -> ArrayView2<'_, f64> {
        self.holistic.view()
    }

    /// Patch bank for strip index `s`, if patch centroids were initialised.
    pub fn patch(&self, s: usize) -> Option<ArrayView2<'_, f64>> {
        self.patches.get(s).map(|p| p.view())
    }

    pub fn num_patch_banks(&self) -> usize {
        self.patches.len()
    }

    /// `c_j ← normalize(λ c_j + (1 − λ) u)`, and the same for each strip bank
    /// with the matching patch query.
    pub fn momentum_update(
        &mut self,
        query: ArrayView1<'_, f64>,
        patch_queries: &[ArrayView1<'_, f64>],
        cluster: usize,
    ) -> Result<()> {
        if cluster >= self.num_clusters() {
            return Err(Error::InvalidArgument(format!(
                "cluster {cluster} out of range for {} centroids",
                self.num_clusters()
            )));
        }
        let lambda = self.params.lambda;
        let update = |bank: &mut Array2<f64>, q: ArrayView1<'_, f64>| {
            let mut row = bank.row_mut(cluster);
            row.zip_mut_with(&q, |c, &x| *c = lambda * *c + (1.0 - lambda) * x);
            normalize_in_place(row);
        };
        update(&mut self.holistic, query);
        for (bank, q) in self.patches.iter_mut().zip(patch_queries) {
            update(bank, *q);
        }
        Ok(())
    }

    /// Applies [`momentum_update`](Self::momentum_update) for each sample of a
    /// training batch, in batch order.
    pub fn update_from_batch(&mut self, out: &ForwardOutput, labels: &[usize]) -> Result<()> {
        for (i, &j) in labels.iter().enumerate() {
            let patches: Vec<_> = out.patches.iter().map(|p| p.row(i)).collect();
            let patches = if self.patches.is_empty() { &[][..] } else { &patches[..] };
            self.momentum_update(out.holistic.row(i), patches, j)?;
        }
        Ok(())
    }
}

/// `−log softmax(⟨u, c⟩ / τ)[own]` and its gradient with respect to `u`.
pub fn infonce_loss(
    query: ArrayView1<'_, f64>,
    own: usize,
    bank: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<(f64, Array1<f64>)> {
    let m = bank.nrows();
    if m == 0 {
        return Err(Error::InvalidArgument("empty centroid bank".into()));
    }
    if own >= m {
        return Err(Error::InvalidArgument(format!("cluster {own} out of range for {m}")));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidArgument("tau must be positive".into()));
    }
    if m == 1 {
        return Ok((0.0, Array1::zeros(query.len())));
    }
    let logits = bank.dot(&query) / tau;
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let weights = logits.mapv(|l| (l - max).exp());
    let total: f64 = weights.sum();
    // Clamp rounding below zero without masking NaN (`f64::max` would).
    let raw = max + total.ln() - logits[own];
    let loss = if raw < 0.0 { 0.0 } else { raw };
    let probs = weights / total;
    let mut grad = bank.t().dot(&probs);
    grad.scaled_add(-1.0, &bank.row(own));
    grad.mapv_inplace(|g| g / tau);
    Ok((loss, grad))
}

/// Strip-aligned sum of [`infonce_loss`] over all patch queries.
pub fn patch_infonce_loss(
    queries: &[ArrayView1<'_, f64>],
    own: usize,
    memory: &CentroidMemory,
) -> Result<(f64, Vec<Array1<f64>>)> {
    if queries.len() != memory.num_patch_banks() {
        return Err(Error::Shape(format!(
            "{} patch queries for {} patch banks",
            queries.len(),
            memory.num_patch_banks()
        )));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(queries.len());
    for (s, q) in queries.iter().enumerate() {
        let (l, g) = infonce_loss(*q, own, memory.patches[s].view(), memory.params.tau)?;
        total += l;
        grads.push(g);
    }
    Ok((total, grads))
}

/// `L = L_u + L_p`; the patch term is absent outside the patch stage.
pub fn joint_loss(holistic: f64, patch: Option<f64>) -> f64 {
    holistic + patch.unwrap_or(0.0)
}

/// Batch-mean loss with gradients shaped for [`crate::model::backward`].
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: f64,
    pub holistic_loss: f64,
    pub patch_loss: Option<f64>,
    pub grad_holistic: Array2<f64>,
    pub grad_patches: Vec<Array2<f64>>,
}

/// Mean over the batch of `L_u` (and `L_p` when `with_patch`), evaluated
/// against a frozen memory snapshot.
pub fn contrastive_batch_loss(
    out: &ForwardOutput,
    labels: &[usize],
    memory: &CentroidMemory,
    with_patch: bool,
) -> Result<BatchLoss> {
    let (b, e) = out.holistic.dim();
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for batch of {b}", labels.len())));
    }
    let scale = 1.0 / b as f64;
    let tau = memory.params.tau;
    let mut grad_holistic = Array2::zeros((b, e));
    let mut grad_patches = vec![Array2::zeros((b, e)); out.patches.len()];
    let (mut lu, mut lp) = (0.0, 0.0);
    for (i, &j) in labels.iter().enumerate() {
        let (l, g) = infonce_loss(out.holistic.row(i), j, memory.holistic(), tau)?;
        lu += l;
        grad_holistic.row_mut(i).scaled_add(scale, &g);
        if with_patch {
            let qs: Vec<_> = out.patches.iter().map(|p| p.row(i)).collect();
            let (l, gs) = patch_infonce_loss(&qs, j, memory)?;
            lp += l;
            for (gp, g) in grad_patches.iter_mut().zip(gs) {
                gp.row_mut(i).scaled_add(scale, &g);
            }
        }
    }
    let holistic_loss = lu * scale;
    let patch_loss = with_patch.then_some(lp * scale);
    Ok(BatchLoss {
        loss: joint_loss(holistic_loss, patch_loss),
        holistic_loss,
        patch_loss,
        grad_holistic,
        grad_patches,
    })
}
