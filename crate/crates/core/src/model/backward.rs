use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::forward::{BnCache, ForwardCache, Mode};
use super::{BatchNormSlot, EncoderParams, LinearSlot};
use crate::error::{Error, Result};

/// Jacobian-vector product of `y = x / ‖x‖` given `y`, `‖x‖` and `∂L/∂y`.
fn normalize_backward(grad: ArrayView2<'_, f64>, y: &Array2<f64>, norms: &Array1<f64>) -> Array2<f64> {
    let mut out = grad.to_owned();
    for ((mut row, y_row), &n) in out.rows_mut().into_iter().zip(y.rows()).zip(norms.iter()) {
        let proj = row.dot(&y_row);
        row.zip_mut_with(&y_row, |g, &yv| *g = (*g - proj * yv) / n);
    }
    out
}

fn linear_backward(
    grad_out: &Array2<f64>,
    input: ArrayView2<'_, f64>,
    params: &EncoderParams,
    slot: &LinearSlot,
    grad: &mut [f64],
) -> Array2<f64> {
    let dw = grad_out.t().dot(&input);
    for (g, d) in grad[slot.weight.clone()].iter_mut().zip(dw.iter()) {
        *g += d;
    }
    let db = grad_out.sum_axis(Axis(0));
    for (g, d) in grad[slot.bias.clone()].iter_mut().zip(db.iter()) {
        *g += d;
    }
    grad_out.dot(&params.linear(slot).weight)
}

fn batch_norm_backward(
    grad_out: &Array2<f64>,
    cache: &BnCache,
    params: &EncoderParams,
    slot: &BatchNormSlot,
    mode: Mode,
    grad: &mut [f64],
) -> Array2<f64> {
    let dgamma = (grad_out * &cache.xhat).sum_axis(Axis(0));
    let dbeta = grad_out.sum_axis(Axis(0));
    for (g, d) in grad[slot.gamma.clone()].iter_mut().zip(dgamma.iter()) {
        *g += d;
    }
    for (g, d) in grad[slot.beta.clone()].iter_mut().zip(dbeta.iter()) {
        *g += d;
    }
    let gamma = ndarray::ArrayView1::from(&params.as_flat()[slot.gamma.clone()]);
    let dxhat = grad_out * &gamma;
    match mode {
        Mode::Eval => dxhat * &cache.inv_std,
        Mode::Train => {
            // dx = inv_std / N * (N dxhat - Σ dxhat - xhat Σ(dxhat xhat))
            let n = grad_out.nrows() as f64;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
            let inner = &dxhat * n - &sum_dxhat - &(&cache.xhat * &sum_dxhat_xhat);
            inner * &(&cache.inv_std / n)
        }
    }
}

/// Exact gradient of `Σ ⟨grad_holistic, u⟩ + Σ_r ⟨grad_patches[r], q_r⟩` with
/// respect to every flat parameter.
///
/// Running-statistic entries always receive zero gradient.
pub fn backward(
    params: &EncoderParams,
    cache: &ForwardCache,
    grad_holistic: ArrayView2<'_, f64>,
    grad_patches: &[ArrayView2<'_, f64>],
) -> Result<Vec<f64>> {
    let arch = params.arch();
    let (b, e, p) = (cache.batch, arch.embed_dim, arch.parts);
    if grad_holistic.dim() != (b, e) {
        return Err(Error::Shape(format!(
            "holistic gradient is {:?}, expected {:?}",
            grad_holistic.dim(),
            (b, e)
        )));
    }
    if grad_patches.len() != p || grad_patches.iter().any(|g| g.dim() != (b, e)) {
        return Err(Error::Shape(format!(
            "patch gradients must be {p} matrices of shape {:?}",
            (b, e)
        )));
    }
    if cache.parts_out.dim() != (b * p, e) || cache.input.ncols() != arch.input_dim {
        return Err(Error::Shape("forward cache does not match parameters".into()));
    }

    let layout = params.layout();
    let mut grad = vec![0.0; layout.total];

    // Gradient w.r.t. the pre-head part embeddings, rows `i * p + r`.
    let mut d_parts = Array2::<f64>::zeros((b * p, e));
    let d_pooled = normalize_backward(grad_holistic, &cache.holistic, &cache.holistic_norm);
    {
        let mut grouped = d_parts
            .view_mut()
            .into_shape_with_order((b, p, e))
            .expect("row-major parts");
        for r in 0..p {
            let mut strip = grouped.index_axis_mut(Axis(1), r);
            strip.scaled_add(1.0 / p as f64, &d_pooled);
        }
    }

    let parts_grouped = cache
        .parts_out
        .view()
        .into_shape_with_order((b, p, e))
        .expect("row-major parts");
    for (r, slot) in layout.heads.iter().enumerate() {
        let dh = normalize_backward(grad_patches[r], &cache.patches[r], &cache.head_norms[r]);
        let strip_in = parts_grouped.index_axis(Axis(1), r);
        let d_strip = linear_backward(&dh, strip_in, params, slot, &mut grad);
        let mut grouped = d_parts
            .view_mut()
            .into_shape_with_order((b, p, e))
            .expect("row-major parts");
        grouped.index_axis_mut(Axis(1), r).scaled_add(1.0, &d_strip);
    }

    let d_a2 = batch_norm_backward(&d_parts, &cache.bn2, params, &layout.bn2, cache.mode, &mut grad);
    let d_hidden = linear_backward(&d_a2, cache.hidden.view(), params, &layout.lin2, &mut grad);
    let mut d_pre = d_hidden;
    d_pre.zip_mut_with(&cache.pre_relu, |g, &x| {
        if x <= 0.0 {
            *g = 0.0;
        }
    });
    let d_a1 = batch_norm_backward(&d_pre, &cache.bn1, params, &layout.bn1, cache.mode, &mut grad);
    linear_backward(&d_a1, cache.input.view(), params, &layout.lin1, &mut grad);

    Ok(grad)
}
