//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes   "VRFMCKPT"
//! version  u32       currently 1
//! meta_len u64       length of the JSON metadata block
//! meta     bytes     UTF-8 JSON (objective, configs, data specs, final losses, seed)
//! count    u32       number of parameter records
//! records  count x { name_len u32, name bytes, rank u32, dims rank x u64,
//!                    values prod(dims) x f64 }
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{LossValues, Objective, TrainConfig};
use crate::distributions::DistributionSpec;
use crate::models::{ModelError, PosteriorConfig, PosteriorModel, VelocityModel, VelocityModelConfig};
use crate::nn::Parameter;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VRFMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    NotACheckpoint,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    format_version: u32,
    objective: Objective,
    velocity: VelocityModelConfig,
    posterior: Option<PosteriorConfig>,
    train: TrainConfig,
    source: DistributionSpec,
    target: DistributionSpec,
    final_losses: LossValues,
    seed: u64,
}

/// A trained model with the configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub objective: Objective,
    pub velocity: VelocityModel,
    pub posterior: Option<PosteriorModel>,
    pub train: TrainConfig,
    /// Distributions the model was trained to transport between.
    pub source: DistributionSpec,
    pub target: DistributionSpec,
    pub final_losses: LossValues,
}

impl Checkpoint {
    pub fn new(
        objective: Objective,
        velocity: VelocityModel,
        posterior: Option<PosteriorModel>,
        train: TrainConfig,
        (source, target): (DistributionSpec, DistributionSpec),
        final_losses: LossValues,
    ) -> Self {
        Self {
            objective,
            velocity,
            posterior,
            train,
            source,
            target,
            final_losses,
        }
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn data_dim(&self) -> usize {
        self.velocity.data_dim()
    }

    fn metadata(&self) -> Metadata {
        Metadata {
            format_version: CHECKPOINT_VERSION,
            objective: self.objective,
            velocity: self.velocity.config.clone(),
            posterior: self.posterior.as_ref().map(|p| p.config.clone()),
            train: self.train.clone(),
            source: self.source.clone(),
            target: self.target.clone(),
            final_losses: self.final_losses,
            seed: self.train.seed,
        }
    }

    fn parameters(&self) -> impl Iterator<Item = &Parameter> {
        self.velocity
            .params
            .iter()
            .chain(self.posterior.iter().flat_map(|p| p.params.iter()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.metadata()).expect("metadata serializes");
        let mut out = Vec::with_capacity(64 + meta.len() + 8 * self.velocity.params.num_values());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        let params: Vec<&Parameter> = self.parameters().collect();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Decodes a checkpoint; never panics on malformed input.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::NotACheckpoint);
        }
        r.pos = 8;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let meta_len = r.len_u64()?;
        let meta: Metadata = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| CheckpointError::Malformed(format!("metadata: {e}")))?;
        if meta.format_version != version {
            return Err(CheckpointError::Malformed(format!(
                "metadata version {} in a version {version} file",
                meta.format_version
            )));
        }
        if meta.source.dim != meta.velocity.data_dim || meta.target.dim != meta.velocity.data_dim {
            return Err(CheckpointError::Malformed("data specs disagree with model dimension".into()));
        }
        if meta.seed != meta.train.seed {
            return Err(CheckpointError::Malformed("seed disagrees with train config".into()));
        }
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| CheckpointError::Malformed("parameter name is not UTF-8".into()))?
                .to_owned();
            let rank = r.u32()? as usize;
            if rank == 0 || rank > 2 {
                return Err(CheckpointError::Malformed(format!("parameter `{name}` has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.len_u64()?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| CheckpointError::Malformed(format!("parameter `{name}` is too large")))?;
            let raw = r.take(n)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            params.push(
                Parameter::new(name, shape, values).map_err(|e| CheckpointError::Malformed(e.to_string()))?,
            );
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Self::assemble(meta, params)
    }

    fn assemble(meta: Metadata, params: Vec<Parameter>) -> Result<Self, CheckpointError> {
        match (meta.objective, &meta.posterior) {
            (Objective::Vrfm, None) => {
                return Err(CheckpointError::Malformed("vrfm checkpoint without posterior".into()))
            }
            (Objective::Rfm, Some(_)) => {
                return Err(CheckpointError::Malformed("rfm checkpoint with posterior".into()))
            }
            _ => {}
        }
        meta.source
            .validate()
            .and_then(|_| meta.target.validate())
            .map_err(|e| CheckpointError::Malformed(format!("data spec: {e}")))?;
        meta.velocity.validate()?;
        if let Some(p) = &meta.posterior {
            p.validate()?;
        }
        // Check sizes before allocating so a corrupt header cannot request
        // an arbitrarily large model.
        let stored = params.iter().map(Parameter::len).sum::<usize>();
        let expected = meta
            .velocity
            .parameter_count()
            .zip(meta.posterior.as_ref().map_or(Some(0), PosteriorConfig::parameter_count))
            .and_then(|(a, b)| a.checked_add(b));
        if expected != Some(stored) {
            return Err(CheckpointError::Malformed(format!(
                "architecture needs {expected:?} values, file holds {stored}"
            )));
        }
        // Architecture comes from the configs; the init draw is overwritten.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut velocity = VelocityModel::new(meta.velocity, &mut rng)?;
        let n_vel = velocity.params.len();
        if params.len() < n_vel {
            return Err(CheckpointError::Malformed(format!(
                "expected at least {n_vel} parameters, found {}",
                params.len()
            )));
        }
        velocity
            .params
            .load_from(&params[..n_vel])
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let posterior = match meta.posterior {
            Some(cfg) => {
                let mut post = PosteriorModel::new(cfg, &mut rng)?;
                post.params
                    .load_from(&params[n_vel..])
                    .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
                Some(post)
            }
            None if params.len() != n_vel => {
                return Err(CheckpointError::Malformed(format!(
                    "{} unexpected parameters",
                    params.len() - n_vel
                )))
            }
            None => None,
        };
        Ok(Self {
            objective: meta.objective,
            velocity,
            posterior,
            train: meta.train,
            source: meta.source,
            target: meta.target,
            final_losses: meta.final_losses,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn len_u64(&mut self) -> Result<usize, CheckpointError> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| CheckpointError::Malformed(format!("length {v} overflows")))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_checkpoint() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vcfg = VelocityModelConfig {
            hidden_dim: 4,
            embed_dim: 4,
            latent_hidden: 4,
            ..VelocityModelConfig::new(2, 3)
        };
        let pcfg = PosteriorConfig {
            hidden_dim: 4,
            embed_dim: 4,
            ..PosteriorConfig::new(2, 3)
        };
        let velocity = VelocityModel::new(vcfg, &mut rng).unwrap();
        let posterior = PosteriorModel::new(pcfg, &mut rng).unwrap();
        let mut train = TrainConfig::new(Objective::Vrfm);
        train.seed = 11;
        Checkpoint::new(
            Objective::Vrfm,
            velocity,
            Some(posterior),
            train,
            (DistributionSpec::standard_normal(2), DistributionSpec::gaussian(vec![1.0, -1.0], 0.5)),
            LossValues { recon: 0.5, kl: 0.1, total: 0.51 },
        )
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let ckpt = sample_checkpoint();
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = sample_checkpoint().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::NotACheckpoint)));
        assert!(matches!(Checkpoint::from_bytes(b"VRFM"), Err(CheckpointError::NotACheckpoint)));
    }

    #[test]
    fn unknown_version() {
        let mut bytes = sample_checkpoint().to_bytes();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::UnsupportedVersion(7))
        ));
    }

    #[test]
    fn truncation_detected() {
        let bytes = sample_checkpoint().to_bytes();
        for cut in [10, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, CheckpointError::Truncated { .. } | CheckpointError::Malformed(_)),
                "cut {cut}: {err}"
            );
        }
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 8]),
            Err(CheckpointError::Truncated { .. })
        ));
    }
}
