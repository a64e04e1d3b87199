//! Losses, the training loop and checkpoint persistence.

mod checkpoint;
mod loss;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{loss_gradient_suite, rfm_loss, rfm_loss_nodes, vrfm_loss, vrfm_loss_nodes, LossNodes, LossValues};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{sample_coupling, DistError, DistributionSpec};
use crate::models::{
    standard_normal_matrix, ModelError, PosteriorConfig, PosteriorModel, VelocityModel, VelocityModelConfig,
};
use crate::nn::{AdamW, AdamWConfig, BoundParams, Gradients, NnError, ParamStore, Tape};

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Classic rectified flow matching.
    Rfm,
    /// Variational rectified flow matching.
    Vrfm,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Rfm => "rfm",
            Objective::Vrfm => "vrfm",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rfm" => Ok(Objective::Rfm),
            "vrfm" => Ok(Objective::Vrfm),
            other => Err(format!("unknown objective `{other}`")),
        }
    }
}

fn default_iterations() -> usize {
    20_000
}
fn default_batch_size() -> usize {
    1000
}
fn default_lr() -> f64 {
    1e-3
}
fn default_kl_weight() -> f64 {
    1.0
}
fn default_log_every() -> usize {
    100
}
fn default_weight_decay() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Weight of the KL term; ignored by the classic objective.
    #[serde(default = "default_kl_weight")]
    pub kl_weight: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

impl TrainConfig {
    pub fn new(objective: Objective) -> Self {
        Self {
            objective,
            iterations: default_iterations(),
            batch_size: default_batch_size(),
            lr: default_lr(),
            weight_decay: default_weight_decay(),
            kl_weight: default_kl_weight(),
            seed: 0,
            log_every: default_log_every(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_owned()));
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if !(self.kl_weight >= 0.0) || !self.kl_weight.is_finite() {
            return bad("kl_weight must be >= 0");
        }
        if self.log_every == 0 {
            return bad("log_every must be >= 1");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Distribution(#[from] DistError),
    #[error("non-finite loss at iteration {iteration} (last finite losses: {last_finite:?})")]
    NonFinite {
        iteration: usize,
        last_finite: Option<LossValues>,
    },
    #[error("optimizer failure at iteration {iteration}: {source}")]
    Optimizer { iteration: usize, source: NnError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One logged point of the loss curve: means over the iterations since the
/// previous record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

pub const LOSS_CSV_HEADER: &str = "iteration,recon,kl,total";

/// Writes the loss history as CSV.
pub fn write_loss_csv<W: Write>(history: &[LossRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{LOSS_CSV_HEADER}")?;
    for r in history {
        writeln!(out, "{},{},{},{}", r.iteration, r.recon, r.kl, r.total)?;
    }
    Ok(())
}

/// Result of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<LossRecord>,
}

fn collect_grads(store: &ParamStore, bound: &BoundParams, grads: &Gradients) -> Vec<Vec<f64>> {
    store
        .iter()
        .zip(bound.nodes())
        .map(|(p, &node)| match grads.get(node) {
            Some(g) => g.as_slice().to_vec(),
            None => vec![0.0; p.len()],
        })
        .collect()
}

/// Random streams derived from the run seed.
const INIT_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;

/// Runs the training loop for exactly `train.iterations` steps.
///
/// Every step draws a fresh independent coupling batch, evaluates the
/// objective, and applies one AdamW update to the velocity network (and the
/// posterior encoder for the variational objective). Identical inputs give
/// bit-identical checkpoints.
pub fn train(
    source: &DistributionSpec,
    target: &DistributionSpec,
    model_cfg: &VelocityModelConfig,
    posterior_cfg: Option<&PosteriorConfig>,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with_progress(source, target, model_cfg, posterior_cfg, train_cfg, |_| {})
}

/// [`train`] with a callback invoked at every logged record.
pub fn train_with_progress(
    source: &DistributionSpec,
    target: &DistributionSpec,
    model_cfg: &VelocityModelConfig,
    posterior_cfg: Option<&PosteriorConfig>,
    train_cfg: &TrainConfig,
    mut on_record: impl FnMut(&LossRecord),
) -> Result<TrainOutcome, TrainError> {
    train_cfg.validate()?;
    source.validate()?;
    target.validate()?;
    if source.dim != target.dim || model_cfg.data_dim != source.dim {
        return Err(TrainError::InvalidConfig(format!(
            "dims disagree: source {}, target {}, model {}",
            source.dim, target.dim, model_cfg.data_dim
        )));
    }
    let objective = train_cfg.objective;
    match (objective, posterior_cfg) {
        (Objective::Rfm, _) if model_cfg.latent_dim != 0 => {
            return Err(TrainError::InvalidConfig("rfm requires latent_dim = 0".into()))
        }
        (Objective::Vrfm, None) => {
            return Err(TrainError::InvalidConfig("vrfm requires a posterior configuration".into()))
        }
        (Objective::Vrfm, Some(p)) if p.latent_dim != model_cfg.latent_dim || model_cfg.latent_dim == 0 => {
            return Err(TrainError::InvalidConfig(format!(
                "latent dims disagree: velocity {} vs posterior {}",
                model_cfg.latent_dim, p.latent_dim
            )))
        }
        (Objective::Vrfm, Some(p)) if p.data_dim != model_cfg.data_dim => {
            return Err(TrainError::InvalidConfig("posterior data_dim disagrees".into()))
        }
        _ => {}
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    init_rng.set_stream(INIT_STREAM);
    let mut data_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    data_rng.set_stream(DATA_STREAM);

    let mut model = VelocityModel::new(model_cfg.clone(), &mut init_rng)?;
    let mut encoder = match objective {
        Objective::Vrfm => Some(PosteriorModel::new(
            posterior_cfg.expect("checked above").clone(),
            &mut init_rng,
        )?),
        Objective::Rfm => None,
    };
    let hyper = train_cfg.adamw();
    let mut model_opt = AdamW::new(&model.params, hyper);
    let mut encoder_opt = encoder.as_ref().map(|e| AdamW::new(&e.params, hyper));

    let mut history = Vec::new();
    let mut window = LossValues::default();
    let mut window_len = 0usize;
    let mut last_finite: Option<LossValues> = None;

    for iteration in 1..=train_cfg.iterations {
        let batch = sample_coupling(source, target, train_cfg.batch_size, &mut data_rng)?;
        let mut tape = Tape::new();
        let mp = model.params.bind(&mut tape, true);
        let (nodes, ep) = match &encoder {
            Some(enc) => {
                let ep = enc.params.bind(&mut tape, true);
                let eps = standard_normal_matrix(batch.len(), model.latent_dim(), &mut data_rng);
                let nodes =
                    vrfm_loss_nodes(&mut tape, &model, &mp, enc, &ep, &batch, train_cfg.kl_weight, eps)?;
                (nodes, Some(ep))
            }
            None => (rfm_loss_nodes(&mut tape, &model, &mp, &batch)?, None),
        };
        let values = nodes.values(&tape);
        if !(values.total.is_finite() && values.recon.is_finite() && values.kl.is_finite()) {
            return Err(TrainError::NonFinite {
                iteration,
                last_finite,
            });
        }
        last_finite = Some(values);
        let grads = tape.backward(nodes.total).map_err(ModelError::from)?;
        let model_grads = collect_grads(&model.params, &mp, &grads);
        let encoder_grads = match (&encoder, &ep) {
            (Some(enc), Some(ep)) => Some(collect_grads(&enc.params, ep, &grads)),
            _ => None,
        };
        drop(tape);
        model_opt
            .step(&mut model.params, &model_grads)
            .map_err(|source| TrainError::Optimizer { iteration, source })?;
        if let (Some(enc), Some(opt), Some(g)) = (&mut encoder, &mut encoder_opt, &encoder_grads) {
            opt.step(&mut enc.params, g)
                .map_err(|source| TrainError::Optimizer { iteration, source })?;
        }

        window.recon += values.recon;
        window.kl += values.kl;
        window.total += values.total;
        window_len += 1;
        if iteration % train_cfg.log_every == 0 || iteration == train_cfg.iterations {
            let n = window_len as f64;
            let record = LossRecord {
                iteration,
                recon: window.recon / n,
                kl: window.kl / n,
                total: window.total / n,
            };
            on_record(&record);
            history.push(record);
            window = LossValues::default();
            window_len = 0;
        }
    }

    let last = history.last().copied().expect("at least one iteration");
    let checkpoint = Checkpoint::new(
        objective,
        model,
        encoder,
        train_cfg.clone(),
        (source.clone(), target.clone()),
        LossValues {
            recon: last.recon,
            kl: last.kl,
            total: last.total,
        },
    );
    Ok(TrainOutcome { checkpoint, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{builtin_spec, CouplingBatch};
    use crate::nn::Matrix;

    fn tiny_velocity(latent: usize) -> VelocityModelConfig {
        VelocityModelConfig {
            hidden_dim: 8,
            embed_dim: 8,
            latent_hidden: 8,
            ..VelocityModelConfig::new(1, latent)
        }
    }

    #[test]
    fn rfm_loss_hand_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = VelocityModel::new(tiny_velocity(0), &mut rng).unwrap();
        for p in model.params.iter_mut() {
            p.values_mut().fill(0.0);
        }
        let batch = CouplingBatch::from_parts(Matrix::column(&[0.0]), Matrix::column(&[2.0]), &[0.3]).unwrap();
        assert_eq!(rfm_loss(&model, &batch).unwrap(), 4.0);
    }

    #[test]
    fn rfm_loss_rejects_latent_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = VelocityModel::new(tiny_velocity(2), &mut rng).unwrap();
        let batch = CouplingBatch::from_parts(Matrix::column(&[0.0]), Matrix::column(&[2.0]), &[0.3]).unwrap();
        assert!(rfm_loss(&model, &batch).is_err());
    }

    #[test]
    fn vrfm_requires_posterior() {
        let s = builtin_spec("source_1d").unwrap();
        let t = builtin_spec("target_1d_bimodal").unwrap();
        let cfg = TrainConfig::new(Objective::Vrfm);
        let err = train(&s, &t, &tiny_velocity(2), None, &cfg).unwrap_err();
        assert!(matches!(err, TrainError::InvalidConfig(_)));
    }

    #[test]
    fn loss_csv_layout() {
        let mut buf = Vec::new();
        let h = [LossRecord { iteration: 100, recon: 1.5, kl: 0.25, total: 1.75 }];
        write_loss_csv(&h, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,recon,kl,total\n100,1.5,0.25,1.75\n");
    }
}
