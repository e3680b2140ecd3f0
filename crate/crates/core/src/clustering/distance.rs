use ndarray::ArrayView2;

use crate::error::{Error, Result};

const UNIT_TOLERANCE: f64 = 1e-6;

/// Dense symmetric `n × n` distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Validates symmetry (within 1e-12), zero diagonal and non-negativity.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(format!("{} entries for n = {n}", data.len())));
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(Error::InvalidArgument(format!("d({i},{i}) != 0")));
            }
            for j in 0..n {
                let d = data[i * n + j];
                if !(d >= 0.0 && d.is_finite()) {
                    return Err(Error::InvalidArgument(format!("d({i},{j}) = {d}")));
                }
                if (d - data[j * n + i]).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { n, data })
    }

    pub(crate) fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = f(i, j);
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// `d(i, j) = 1 - ⟨u_i, u_j⟩`, clamped to `[0, 2]`.
pub fn cosine_distances(features: ArrayView2<'_, f64>) -> Result<DistanceMatrix> {
    for (i, row) in features.rows().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "feature {i} has norm {norm}, expected unit length"
            )));
        }
    }
    let gram = features.dot(&features.t());
    Ok(DistanceMatrix::from_fn(features.nrows(), |i, j| {
        (1.0 - gram[[i, j]]).clamp(0.0, 2.0)
    }))
}
