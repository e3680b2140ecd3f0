//! JSON checkpoints: the global generic vector plus every client's
//! batch-norm state. Floats are written in shortest round-trip form, so
//! store/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, EncoderParams};
use crate::error::{Error, Result};
use crate::federation::StageId;

pub const FORMAT: &str = "fedcc-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientState {
    pub client_id: usize,
    pub num_images: usize,
    pub specialized: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub arch: Architecture,
    pub stage: StageId,
    pub generic: Vec<f64>,
    pub clients: Vec<ClientState>,
}

impl Checkpoint {
    /// Builds a checkpoint from per-client models that share generic parameters.
    pub fn from_clients(stage: StageId, clients: &[(usize, usize, &EncoderParams)]) -> Result<Self> {
        let first = clients
            .first()
            .ok_or_else(|| Error::InvalidArgument("checkpoint needs at least one client".into()))?;
        let arch = *first.2.arch();
        let generic = first.2.partition().generic;
        let mut states = Vec::with_capacity(clients.len());
        for &(client_id, num_images, params) in clients {
            let part = params.partition();
            if *params.arch() != arch || part.generic != generic {
                return Err(Error::InvalidArgument("clients do not share generic parameters".into()));
            }
            states.push(ClientState {
                client_id,
                num_images,
                specialized: part.specialized,
            });
        }
        Ok(Self {
            format: FORMAT.into(),
            version: VERSION,
            arch,
            stage,
            generic,
            clients: states,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        self.arch.validate()?;
        if self.generic.len() != self.arch.num_generic() {
            return Err(Error::Shape("checkpoint generic vector size".into()));
        }
        if self
            .clients
            .iter()
            .any(|c| c.specialized.len() != self.arch.num_specialized())
        {
            return Err(Error::Shape("checkpoint specialized vector size".into()));
        }
        Ok(())
    }

    /// The localised model of the client with id `client_id`.
    pub fn client_model(&self, client_id: usize) -> Result<EncoderParams> {
        let state = self
            .clients
            .iter()
            .find(|c| c.client_id == client_id)
            .ok_or_else(|| Error::InvalidArgument(format!("no client {client_id} in checkpoint")))?;
        EncoderParams::merge(self.arch, &self.generic, &state.specialized)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch() -> Architecture {
        Architecture {
            input_dim: 3,
            hidden_dim: 5,
            embed_dim: 4,
            parts: 2,
            ..Architecture::default()
        }
    }

    proptest::proptest! {
        #[test]
        fn store_load_is_bit_exact(seed in 0u64..10_000, scale in 1e-300f64..1e300) {
            let mut p = EncoderParams::init(arch(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            p.as_flat_mut().iter_mut().enumerate().for_each(|(i, v)| if i % 3 == 0 { *v *= scale });
            let ckpt = Checkpoint::from_clients(StageId::II, &[(0, 10, &p)]).unwrap();
            let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
            let model = back.client_model(0).unwrap();
            proptest::prop_assert!(model.as_flat().iter().zip(p.as_flat()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn rejects_mismatched_generic() {
        let a = EncoderParams::init(arch(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = EncoderParams::init(arch(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(Checkpoint::from_clients(StageId::I, &[(0, 1, &a), (1, 1, &b)]).is_err());
    }

    #[test]
    fn rejects_truncated_vectors() {
        let a = EncoderParams::init(arch(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut ckpt = Checkpoint::from_clients(StageId::I, &[(0, 1, &a)]).unwrap();
        ckpt.generic.pop();
        assert!(Checkpoint::from_json(&ckpt.to_json().unwrap()).is_err());
    }
}
