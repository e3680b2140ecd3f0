//! Server-side weighted averaging and model localisation.

use crate::error::{Error, Result};
use crate::model::EncoderParams;

/// `n_k / n` for each client.
pub fn aggregation_weights(sizes: &[usize]) -> Result<Vec<f64>> {
    if sizes.is_empty() {
        return Err(Error::InvalidArgument("no clients to aggregate".into()));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument("every client needs at least one image".into()));
    }
    let total: usize = sizes.iter().sum();
    Ok(sizes.iter().map(|&n| n as f64 / total as f64).collect())
}

/// Per-entry weighted sum, accumulated in client order.
fn weighted_sum(vectors: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    let len = vectors[0].len();
    if vectors.iter().any(|v| v.len() != len) {
        return Err(Error::Shape("clients disagree on parameter count".into()));
    }
    let mut out: Vec<f64> = vectors[0].iter().map(|x| weights[0] * x).collect();
    for (v, &w) in vectors.iter().zip(weights).skip(1) {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += w * x;
        }
    }
    Ok(out)
}

/// Size-weighted average of every parameter, batch-norm state included.
pub fn aggregate_full(clients: &[(&EncoderParams, usize)]) -> Result<EncoderParams> {
    let sizes: Vec<usize> = clients.iter().map(|c| c.1).collect();
    let weights = aggregation_weights(&sizes)?;
    let arch = *clients[0].0.arch();
    if clients.iter().any(|(p, _)| *p.arch() != arch) {
        return Err(Error::Shape("clients have different architectures".into()));
    }
    let vectors: Vec<&[f64]> = clients.iter().map(|(p, _)| p.as_flat()).collect();
    EncoderParams::from_flat(arch, weighted_sum(&vectors, &weights)?)
}

/// Size-weighted average of generic vectors only.
pub fn aggregate_generic(clients: &[(&[f64], usize)]) -> Result<Vec<f64>> {
    let sizes: Vec<usize> = clients.iter().map(|c| c.1).collect();
    let weights = aggregation_weights(&sizes)?;
    let vectors: Vec<&[f64]> = clients.iter().map(|(g, _)| *g).collect();
    weighted_sum(&vectors, &weights)
}

/// Fresh global generic parameters combined with the client's own
/// batch-norm state.
pub fn localize(global_generic: &[f64], client: &EncoderParams) -> Result<EncoderParams> {
    let specialized = client.partition().specialized;
    EncoderParams::merge(*client.arch(), global_generic, &specialized)
}
