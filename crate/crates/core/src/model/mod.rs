//! The small encoder used by every client.
//!
//! Each input is delivered as `parts` pre-split segments. A shared trunk
//! (linear → batch-norm → ReLU → linear → batch-norm) maps every segment to
//! a part embedding. The holistic embedding is the L2-normalised mean of the
//! part embeddings; patch embeddings are the L2-normalised outputs of one
//! linear head per strip index.
//!
//! All parameters live in one flat `Vec<f64>` with a fixed layout so that
//! optimisation, aggregation and checkpointing operate on plain vectors.

mod backward;
pub mod checkpoint;
mod forward;

use std::ops::Range;

use ndarray::{ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backward::backward;
pub use forward::{forward, BnUpdate, ForwardCache, ForwardOutput, Mode};

/// Layer sizes and batch-norm hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub parts: usize,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
}

fn default_bn_eps() -> f64 {
    1e-5
}

fn default_bn_momentum() -> f64 {
    0.1
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_dim: 32,
            hidden_dim: 64,
            embed_dim: 32,
            parts: 2,
            bn_eps: default_bn_eps(),
            bn_momentum: default_bn_momentum(),
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.embed_dim == 0 || self.parts == 0 {
            return Err(Error::InvalidArgument("architecture sizes must be positive".into()));
        }
        if !(self.bn_eps > 0.0 && self.bn_eps.is_finite()) {
            return Err(Error::InvalidArgument("bn_eps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::InvalidArgument("bn_momentum must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Width of one input record (all segments, contiguous by strip).
    pub fn record_dim(&self) -> usize {
        self.parts * self.input_dim
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn num_params(&self) -> usize {
        self.layout().total
    }

    pub fn num_specialized(&self) -> usize {
        4 * (self.hidden_dim + self.embed_dim)
    }

    pub fn num_generic(&self) -> usize {
        self.num_params() - self.num_specialized()
    }
}

/// Offsets of one linear layer inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearSlot {
    pub rows: usize,
    pub cols: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

impl LinearSlot {
    fn span(&self) -> Range<usize> {
        self.weight.start..self.bias.end
    }
}

/// Offsets of one batch-norm layer inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchNormSlot {
    pub channels: usize,
    pub gamma: Range<usize>,
    pub beta: Range<usize>,
    pub running_mean: Range<usize>,
    pub running_var: Range<usize>,
}

impl BatchNormSlot {
    fn span(&self) -> Range<usize> {
        self.gamma.start..self.running_var.end
    }
}

/// Flat layout: `lin1, bn1, lin2, bn2, head_0 .. head_{p-1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub lin1: LinearSlot,
    pub bn1: BatchNormSlot,
    pub lin2: LinearSlot,
    pub bn2: BatchNormSlot,
    pub heads: Vec<LinearSlot>,
    pub total: usize,
}

struct Cursor(usize);

impl Cursor {
    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.0..self.0 + n;
        self.0 += n;
        r
    }

    fn linear(&mut self, rows: usize, cols: usize) -> LinearSlot {
        LinearSlot {
            rows,
            cols,
            weight: self.take(rows * cols),
            bias: self.take(rows),
        }
    }

    fn batch_norm(&mut self, channels: usize) -> BatchNormSlot {
        BatchNormSlot {
            channels,
            gamma: self.take(channels),
            beta: self.take(channels),
            running_mean: self.take(channels),
            running_var: self.take(channels),
        }
    }
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let mut cursor = Cursor(0);
        let lin1 = cursor.linear(arch.hidden_dim, arch.input_dim);
        let bn1 = cursor.batch_norm(arch.hidden_dim);
        let lin2 = cursor.linear(arch.embed_dim, arch.hidden_dim);
        let bn2 = cursor.batch_norm(arch.embed_dim);
        let heads = (0..arch.parts)
            .map(|_| cursor.linear(arch.embed_dim, arch.embed_dim))
            .collect();
        Layout {
            lin1,
            bn1,
            lin2,
            bn2,
            heads,
            total: cursor.0,
        }
    }

    /// Ranges belonging to the generic partition, in flat order.
    pub fn generic_ranges(&self) -> Vec<Range<usize>> {
        let mut out = vec![self.lin1.span(), self.lin2.span()];
        out.extend(self.heads.iter().map(LinearSlot::span));
        out
    }

    /// Ranges belonging to the specialized (batch-norm) partition, in flat order.
    pub fn specialized_ranges(&self) -> Vec<Range<usize>> {
        vec![self.bn1.span(), self.bn2.span()]
    }

    /// Ranges of the batch-norm running statistics; these are never optimised.
    pub fn running_stat_ranges(&self) -> Vec<Range<usize>> {
        vec![
            self.bn1.running_mean.start..self.bn1.running_var.end,
            self.bn2.running_mean.start..self.bn2.running_var.end,
        ]
    }

    /// `true` for every flat entry that receives gradient updates.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.total];
        for r in self.running_stat_ranges() {
            mask[r].iter_mut().for_each(|m| *m = false);
        }
        mask
    }
}

/// Read-only view of a linear layer.
#[derive(Debug, Clone, Copy)]
pub struct LinearLayer<'a> {
    pub weight: ArrayView2<'a, f64>,
    pub bias: ArrayView1<'a, f64>,
}

/// Read-only view of a batch-norm layer.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormState<'a> {
    pub gamma: &'a [f64],
    pub beta: &'a [f64],
    pub running_mean: &'a [f64],
    pub running_var: &'a [f64],
    pub eps: f64,
    pub bn_momentum: f64,
}

/// Encoder weights `θ(W_g, W_l)` stored as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    arch: Architecture,
    values: Vec<f64>,
}

impl EncoderParams {
    /// PyTorch-style initialisation: uniform `±1/sqrt(fan_in)` linear weights,
    /// unit-gamma/zero-beta batch-norm, identity patch heads.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        let mut values = vec![0.0; layout.total];
        for slot in [&layout.lin1, &layout.lin2] {
            let bound = 1.0 / (slot.cols as f64).sqrt();
            for v in &mut values[slot.weight.clone()] {
                *v = rng.random_range(-bound..bound);
            }
            for v in &mut values[slot.bias.clone()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        for bn in [&layout.bn1, &layout.bn2] {
            values[bn.gamma.clone()].fill(1.0);
            values[bn.running_var.clone()].fill(1.0);
        }
        for head in &layout.heads {
            for i in 0..head.rows {
                values[head.weight.start + i * head.cols + i] = 1.0;
            }
        }
        Ok(Self { arch, values })
    }

    pub fn from_flat(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let expected = arch.num_params();
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} parameters, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder parameters".into()));
        }
        let params = Self { arch, values };
        let layout = params.layout();
        if [&layout.bn1, &layout.bn2]
            .iter()
            .any(|bn| params.values[bn.running_var.clone()].iter().any(|&v| v < 0.0))
        {
            return Err(Error::InvalidArgument("running variance must be non-negative".into()));
        }
        Ok(params)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layout(&self) -> Layout {
        self.arch.layout()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    pub fn linear<'a>(&'a self, slot: &LinearSlot) -> LinearLayer<'a> {
        let weight = ArrayView2::from_shape((slot.rows, slot.cols), &self.values[slot.weight.clone()])
            .expect("layout matches shape");
        LinearLayer {
            weight,
            bias: ArrayView1::from(&self.values[slot.bias.clone()]),
        }
    }

    pub fn batch_norm<'a>(&'a self, slot: &BatchNormSlot) -> BatchNormState<'a> {
        BatchNormState {
            gamma: &self.values[slot.gamma.clone()],
            beta: &self.values[slot.beta.clone()],
            running_mean: &self.values[slot.running_mean.clone()],
            running_var: &self.values[slot.running_var.clone()],
            eps: self.arch.bn_eps,
            bn_momentum: self.arch.bn_momentum,
        }
    }

    /// Split into generic (`W_g`) and specialized (`W_l`) flat vectors.
    pub fn partition(&self) -> ParamPartition {
        let layout = self.layout();
        let gather = |ranges: Vec<Range<usize>>| {
            ranges
                .into_iter()
                .flat_map(|r| self.values[r].iter().copied())
                .collect::<Vec<_>>()
        };
        ParamPartition {
            generic: gather(layout.generic_ranges()),
            specialized: gather(layout.specialized_ranges()),
        }
    }

    /// Inverse of [`partition`](Self::partition).
    pub fn merge(arch: Architecture, generic: &[f64], specialized: &[f64]) -> Result<Self> {
        arch.validate()?;
        if generic.len() != arch.num_generic() || specialized.len() != arch.num_specialized() {
            return Err(Error::Shape(format!(
                "partition sizes ({}, {}) do not match architecture ({}, {})",
                generic.len(),
                specialized.len(),
                arch.num_generic(),
                arch.num_specialized()
            )));
        }
        let layout = arch.layout();
        let mut values = vec![0.0; layout.total];
        let scatter = |values: &mut [f64], ranges: Vec<Range<usize>>, src: &[f64]| {
            let mut offset = 0;
            for r in ranges {
                let n = r.len();
                values[r].copy_from_slice(&src[offset..offset + n]);
                offset += n;
            }
        };
        scatter(&mut values, layout.generic_ranges(), generic);
        scatter(&mut values, layout.specialized_ranges(), specialized);
        Ok(Self { arch, values })
    }

    /// Overwrite the batch-norm running statistics produced by a train-mode forward.
    pub fn apply_bn_update(&mut self, update: &BnUpdate) {
        let layout = self.layout();
        for (slot, (mean, var)) in [&layout.bn1, &layout.bn2]
            .into_iter()
            .zip([(&update.mean1, &update.var1), (&update.mean2, &update.var2)])
        {
            self.values[slot.running_mean.clone()].copy_from_slice(mean);
            self.values[slot.running_var.clone()].copy_from_slice(var);
        }
    }
}

/// `W_g` and `W_l` as flat vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPartition {
    pub generic: Vec<f64>,
    pub specialized: Vec<f64>,
}
