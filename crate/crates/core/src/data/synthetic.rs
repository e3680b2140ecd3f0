use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{assign_eval_split, ClientDataset, Record, Split};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Synthetic multi-client identity benchmark.
///
/// Every identity has one prototype per strip drawn inside a low-dimensional
/// subspace shared by all clients. An image is its prototype plus isotropic
/// noise plus a fixed per-(client, camera) offset; each client then applies
/// its own per-dimension affine transform (feature skew). Training and
/// evaluation identities are disjoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default = "d_clients")]
    pub clients: usize,
    #[serde(default = "d_identities")]
    pub identities_per_client: usize,
    /// Identities reserved for query/gallery evaluation on each client.
    #[serde(default = "d_identities")]
    pub eval_identities_per_client: usize,
    #[serde(default = "d_images")]
    pub images_per_identity: usize,
    #[serde(default = "d_input_dim")]
    pub input_dim: usize,
    #[serde(default = "d_parts")]
    pub parts: usize,
    /// Dimension of the identity subspace inside each strip.
    #[serde(default = "d_signal_dim")]
    pub signal_dim: usize,
    #[serde(default = "d_noise")]
    pub noise_sigma: f64,
    #[serde(default = "d_camera")]
    pub camera_sigma: f64,
    #[serde(default = "d_cameras")]
    pub cameras: usize,
    /// Standard deviation of each client's additive shift.
    #[serde(default = "d_skew_shift")]
    pub skew_shift: f64,
    /// Standard deviation of each client's log-scale.
    #[serde(default = "d_skew_scale")]
    pub skew_scale: f64,
    /// Optional per-client multiplier on the identity counts (label skew).
    #[serde(default)]
    pub identity_multipliers: Option<Vec<f64>>,
    #[serde(default = "d_query_fraction")]
    pub query_fraction: f64,
    /// Set from the run seed; not read from config files.
    #[serde(skip)]
    pub seed: u64,
}

fn d_clients() -> usize {
    4
}
fn d_identities() -> usize {
    25
}
fn d_images() -> usize {
    16
}
fn d_input_dim() -> usize {
    32
}
fn d_parts() -> usize {
    2
}
fn d_signal_dim() -> usize {
    4
}
fn d_noise() -> f64 {
    0.25
}
fn d_camera() -> f64 {
    0.1
}
fn d_cameras() -> usize {
    2
}
fn d_skew_shift() -> f64 {
    2.0
}
fn d_skew_scale() -> f64 {
    0.3
}
fn d_query_fraction() -> f64 {
    0.25
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            clients: d_clients(),
            identities_per_client: d_identities(),
            eval_identities_per_client: d_identities(),
            images_per_identity: d_images(),
            input_dim: d_input_dim(),
            parts: d_parts(),
            signal_dim: d_signal_dim(),
            noise_sigma: d_noise(),
            camera_sigma: d_camera(),
            cameras: d_cameras(),
            skew_shift: d_skew_shift(),
            skew_scale: d_skew_scale(),
            identity_multipliers: None,
            query_fraction: d_query_fraction(),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("clients", self.clients),
            ("identities_per_client", self.identities_per_client),
            ("images_per_identity", self.images_per_identity),
            ("input_dim", self.input_dim),
            ("parts", self.parts),
            ("signal_dim", self.signal_dim),
            ("cameras", self.cameras),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("data.{name} must be >= 1")));
        }
        if self.signal_dim > self.input_dim {
            return Err(Error::Config("data.signal_dim must not exceed input_dim".into()));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("camera_sigma", self.camera_sigma),
            ("skew_shift", self.skew_shift),
            ("skew_scale", self.skew_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("data.{name} must be >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.query_fraction) {
            return Err(Error::Config("data.query_fraction must lie in [0, 1]".into()));
        }
        if let Some(m) = &self.identity_multipliers {
            if m.len() != self.clients {
                return Err(Error::Config(format!(
                    "data.identity_multipliers has {} entries for {} clients",
                    m.len(),
                    self.clients
                )));
            }
            if m.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::Config("data.identity_multipliers must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.parts * self.input_dim
    }

    fn scaled(&self, base: usize, client: usize) -> usize {
        match &self.identity_multipliers {
            Some(m) if base > 0 => ((base as f64 * m[client]).round() as usize).max(1),
            _ => base,
        }
    }
}

fn gaussian<R: Rng>(rng: &mut R, n: usize, sigma: f64) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    })
}

/// Orthonormal `input_dim × signal_dim` basis via Gram-Schmidt on Gaussian columns.
fn random_basis<R: Rng>(rng: &mut R, input_dim: usize, signal_dim: usize) -> Array2<f64> {
    let mut basis = Array2::<f64>::zeros((input_dim, signal_dim));
    let mut k = 0;
    while k < signal_dim {
        let mut v = gaussian(rng, input_dim, 1.0);
        for j in 0..k {
            let col = basis.column(j);
            let proj = col.dot(&v);
            v.scaled_add(-proj, &col);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            basis.column_mut(k).assign(&(v / norm));
            k += 1;
        }
    }
    basis
}

/// Builds every client's dataset; a pure function of `config`.
pub fn generate(config: &SyntheticConfig) -> Result<Vec<ClientDataset>> {
    config.validate()?;
    let d = config.input_dim;
    let p = config.parts;
    let mut shared = stream(config.seed, &[0x5157]);
    let bases: Vec<Array2<f64>> = (0..p)
        .map(|_| random_basis(&mut shared, d, config.signal_dim))
        .collect();

    let mut next_identity = 0;
    let mut out = Vec::with_capacity(config.clients);
    for k in 0..config.clients {
        let mut rng = stream(config.seed, &[0xC11E, k as u64]);
        let shift = gaussian(&mut rng, p * d, config.skew_shift);
        let scale = gaussian(&mut rng, p * d, config.skew_scale).mapv(f64::exp);
        let camera_offsets: Vec<Array1<f64>> = (0..config.cameras)
            .map(|_| gaussian(&mut rng, p * d, config.camera_sigma))
            .collect();

        let mut dataset = ClientDataset::new(k, p * d);
        for (split, count) in [
            (Split::Train, config.scaled(config.identities_per_client, k)),
            (Split::Gallery, config.scaled(config.eval_identities_per_client, k)),
        ] {
            for _ in 0..count {
                let identity = next_identity;
                next_identity += 1;
                let prototype: Vec<Array1<f64>> = bases
                    .iter()
                    .map(|b| b.dot(&gaussian(&mut rng, config.signal_dim, 1.0)))
                    .collect();
                for img in 0..config.images_per_identity {
                    let camera = img % config.cameras;
                    let mut x = Array1::<f64>::zeros(p * d);
                    for (r, proto) in prototype.iter().enumerate() {
                        x.slice_mut(ndarray::s![r * d..(r + 1) * d]).assign(proto);
                    }
                    x += &gaussian(&mut rng, p * d, config.noise_sigma);
                    x += &camera_offsets[camera];
                    let x = &x * &scale + &shift;
                    dataset.records.push(Record {
                        features: x.to_vec(),
                        identity_id: identity,
                        camera_id: camera,
                        split,
                    });
                }
            }
        }
        assign_eval_split(&mut dataset, config.query_fraction, config.seed)?;
        out.push(dataset);
    }
    Ok(out)
}
