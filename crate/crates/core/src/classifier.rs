//! Linear softmax classifier over pseudo-labels, used by the cross-entropy
//! baseline. The head is client-local and rebuilt whenever the clusters are.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::optim::{Adam, AdamParams};

#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub loss: f64,
    pub grad_features: Array2<f64>,
    /// Flat `[weight (m × e, row-major) ; bias (m)]`.
    pub grad_head: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ClassifierHead {
    classes: usize,
    dim: usize,
    values: Vec<f64>,
    optimizer: Adam,
}

impl ClassifierHead {
    /// Uniform `±1/sqrt(dim)` initialisation.
    pub fn init<R: Rng + ?Sized>(classes: usize, dim: usize, adam: AdamParams, rng: &mut R) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let len = classes * dim + classes;
        let values = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            classes,
            dim,
            values,
            optimizer: Adam::new(adam, len),
        }
    }

    pub fn from_values(classes: usize, dim: usize, values: Vec<f64>, adam: AdamParams) -> Result<Self> {
        if values.len() != classes * dim + classes {
            return Err(Error::Shape("classifier parameter count".into()));
        }
        let len = values.len();
        Ok(Self {
            classes,
            dim,
            values,
            optimizer: Adam::new(adam, len),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Mean cross-entropy of `features · Wᵀ + b` against `labels`.
    pub fn loss(&self, features: ArrayView2<'_, f64>, labels: &[usize]) -> Result<CrossEntropy> {
        let (b, e) = features.dim();
        if e != self.dim || labels.len() != b || b == 0 {
            return Err(Error::Shape("classifier input".into()));
        }
        if labels.iter().any(|&l| l >= self.classes) {
            return Err(Error::InvalidArgument("label outside classifier range".into()));
        }
        let (m, split) = (self.classes, self.classes * self.dim);
        let weight = ArrayView2::from_shape((m, e), &self.values[..split]).expect("shape");
        let bias = ndarray::ArrayView1::from(&self.values[split..]);
        let logits = features.dot(&weight.t()) + bias;
        let scale = 1.0 / b as f64;
        let mut dlogits = Array2::<f64>::zeros((b, m));
        let mut loss = 0.0;
        for (i, row) in logits.rows().into_iter().enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let exps: Array1<f64> = row.mapv(|v| (v - max).exp());
            let z = exps.sum();
            loss += max + z.ln() - row[labels[i]];
            let mut d = dlogits.row_mut(i);
            d.assign(&(exps / z));
            d[labels[i]] -= 1.0;
            d.mapv_inplace(|v| v * scale);
        }
        let grad_features = dlogits.dot(&weight);
        let gw = dlogits.t().dot(&features);
        let gb = dlogits.sum_axis(ndarray::Axis(0));
        let mut grad_head = gw.into_raw_vec_and_offset().0;
        grad_head.extend(gb.iter());
        Ok(CrossEntropy {
            loss: loss * scale,
            grad_features,
            grad_head,
        })
    }

    pub fn step(&mut self, grad_head: &[f64]) -> Result<()> {
        self.optimizer.step(&mut self.values, grad_head, None)
    }
}
