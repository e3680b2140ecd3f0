use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{BatchNormState, EncoderParams, LinearLayer};
use crate::error::{Error, Result};

/// Norm floor used by L2 normalisation, matching the usual `max(‖x‖, ε)` guard.
pub(crate) const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics only; every row is processed independently.
    Eval,
}

/// New running statistics produced by a train-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate {
    pub mean1: Vec<f64>,
    pub var1: Vec<f64>,
    pub mean2: Vec<f64>,
    pub var2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Intermediate activations needed by [`backward`](super::backward).
///
/// Rows are ordered `sample * parts + strip`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) mode: Mode,
    pub(crate) batch: usize,
    pub(crate) input: Array2<f64>,
    pub(crate) bn1: BnCache,
    pub(crate) pre_relu: Array2<f64>,
    pub(crate) hidden: Array2<f64>,
    pub(crate) bn2: BnCache,
    pub(crate) parts_out: Array2<f64>,
    pub(crate) holistic: Array2<f64>,
    pub(crate) holistic_norm: Array1<f64>,
    pub(crate) patches: Vec<Array2<f64>>,
    pub(crate) head_norms: Vec<Array1<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `batch × embed_dim`, unit rows.
    pub holistic: Array2<f64>,
    /// One `batch × embed_dim` matrix of unit rows per strip index.
    pub patches: Vec<Array2<f64>>,
    /// Pre-head part embeddings, `batch * parts × embed_dim`.
    pub part_embeddings: Array2<f64>,
    pub cache: ForwardCache,
    /// Present in train mode only.
    pub bn_update: Option<BnUpdate>,
}

impl ForwardOutput {
    /// `[u ; q_1 ; … ; q_p]` renormalised to unit length, one row per sample.
    pub fn concatenated(&self) -> Array2<f64> {
        concat_embeddings(&self.holistic, &self.patches)
    }
}

pub(crate) fn concat_embeddings(holistic: &Array2<f64>, patches: &[Array2<f64>]) -> Array2<f64> {
    let (b, e) = holistic.dim();
    let mut out = Array2::zeros((b, e * (1 + patches.len())));
    for i in 0..b {
        let mut row = out.row_mut(i);
        for (k, block) in std::iter::once(holistic).chain(patches.iter()).enumerate() {
            row.slice_mut(ndarray::s![k * e..(k + 1) * e]).assign(&block.row(i));
        }
        let norm = row.dot(&row).sqrt().max(NORM_FLOOR);
        row.mapv_inplace(|v| v / norm);
    }
    out
}

fn linear_forward(x: &Array2<f64>, layer: LinearLayer<'_>) -> Array2<f64> {
    x.dot(&layer.weight.t()) + layer.bias
}

/// Updated running (mean, var), produced in train mode.
type RunningStats = (Vec<f64>, Vec<f64>);

fn batch_norm_forward(
    x: &Array2<f64>,
    bn: BatchNormState<'_>,
    mode: Mode,
) -> (Array2<f64>, BnCache, Option<RunningStats>) {
    let gamma = ndarray::ArrayView1::from(bn.gamma);
    let beta = ndarray::ArrayView1::from(bn.beta);
    let (mean, var, update) = match mode {
        Mode::Train => {
            let n = x.nrows() as f64;
            let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
            let centered = x - &mean;
            let var = (&centered * &centered).sum_axis(Axis(0)) / n;
            let unbiased = &var * (n / (n - 1.0));
            let m = bn.bn_momentum;
            let run_mean = bn
                .running_mean
                .iter()
                .zip(mean.iter())
                .map(|(r, b)| (1.0 - m) * r + m * b)
                .collect();
            let run_var = bn
                .running_var
                .iter()
                .zip(unbiased.iter())
                .map(|(r, b)| (1.0 - m) * r + m * b)
                .collect();
            (mean, var, Some((run_mean, run_var)))
        }
        Mode::Eval => (
            Array1::from(bn.running_mean.to_vec()),
            Array1::from(bn.running_var.to_vec()),
            None,
        ),
    };
    let inv_std = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
    let xhat = (x - &mean) * &inv_std;
    // Broadcasting can yield column-major output for single-row or
    // single-column inputs; later reshapes need row-major.
    let y = (&xhat * &gamma + beta).as_standard_layout().into_owned();
    (y, BnCache { xhat, inv_std }, update)
}

/// Row-wise L2 normalisation, returning the pre-normalisation norms.
pub(crate) fn normalize_rows(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = x.map_axis(Axis(1), |row| row.dot(&row).sqrt().max(NORM_FLOOR));
    let mut out = x.clone();
    for (mut row, &n) in out.rows_mut().into_iter().zip(norms.iter()) {
        row.mapv_inplace(|v| v / n);
    }
    (out, norms)
}

/// Runs the encoder on `batch` (`batch_size × parts * input_dim`, strips contiguous).
pub fn forward(params: &EncoderParams, batch: ArrayView2<'_, f64>, mode: Mode) -> Result<ForwardOutput> {
    let arch = *params.arch();
    let (b, width) = batch.dim();
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if mode == Mode::Train && b < 2 {
        return Err(Error::InvalidArgument(
            "train-mode batch needs at least 2 samples for batch statistics".into(),
        ));
    }
    if width != arch.record_dim() {
        return Err(Error::Shape(format!(
            "batch width {width} != parts * input_dim = {}",
            arch.record_dim()
        )));
    }
    if batch.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("encoder input".into()));
    }

    let p = arch.parts;
    let layout = params.layout();
    // One row per (sample, strip): the trunk is shared across strips.
    let input = batch
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * p, arch.input_dim))
        .expect("contiguous strips");

    let a1 = linear_forward(&input, params.linear(&layout.lin1));
    let (pre_relu, bn1, up1) = batch_norm_forward(&a1, params.batch_norm(&layout.bn1), mode);
    let hidden = pre_relu.mapv(|v| v.max(0.0));
    let a2 = linear_forward(&hidden, params.linear(&layout.lin2));
    let (parts_out, bn2, up2) = batch_norm_forward(&a2, params.batch_norm(&layout.bn2), mode);

    let e = arch.embed_dim;
    let grouped = parts_out
        .view()
        .into_shape_with_order((b, p, e))
        .expect("row-major parts");
    let pooled = grouped.mean_axis(Axis(1)).expect("parts > 0");
    let (holistic, holistic_norm) = normalize_rows(&pooled);

    let mut patches = Vec::with_capacity(p);
    let mut head_norms = Vec::with_capacity(p);
    for (r, slot) in layout.heads.iter().enumerate() {
        let strip = grouped.index_axis(Axis(1), r).to_owned();
        let h = linear_forward(&strip, params.linear(slot));
        let (q, n) = normalize_rows(&h);
        patches.push(q);
        head_norms.push(n);
    }

    let bn_update = match (up1, up2) {
        (Some((mean1, var1)), Some((mean2, var2))) => Some(BnUpdate {
            mean1,
            var1,
            mean2,
            var2,
        }),
        _ => None,
    };

    Ok(ForwardOutput {
        holistic: holistic.clone(),
        patches: patches.clone(),
        part_embeddings: parts_out.clone(),
        cache: ForwardCache {
            mode,
            batch: b,
            input,
            bn1,
            pre_relu,
            hidden,
            bn2,
            parts_out,
            holistic,
            holistic_norm,
            patches,
            head_norms,
        },
        bn_update,
    })
}
