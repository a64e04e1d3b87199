//! Rectified flow matching losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distributions::{sample_coupling, CouplingBatch, DistributionSpec};
use crate::models::{
    kl_mean_node, reparameterize, standard_normal_matrix, ModelError, PosteriorConfig, PosteriorInputs,
    PosteriorModel, VelocityModel, VelocityModelConfig,
};
use crate::nn::{grad_check_params, BoundParams, GradCheckReport, Matrix, NnError, NodeId, Tape};

/// Loss terms recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub recon: NodeId,
    pub kl: Option<NodeId>,
    pub total: NodeId,
}

/// Scalar loss values.
#[derive(Clone, Copy, Debug, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossValues {
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossNodes {
    pub fn values(&self, tape: &Tape) -> LossValues {
        let get = |id: NodeId| tape.value(id).as_slice()[0];
        LossValues {
            recon: get(self.recon),
            kl: self.kl.map_or(0.0, get),
            total: get(self.total),
        }
    }
}

/// Batch mean of `||pred - target||^2` per row.
fn mean_squared_norm(tape: &mut Tape, pred: NodeId, target: NodeId) -> Result<NodeId, ModelError> {
    let dim = tape.value(pred).cols() as f64;
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff)?;
    let m = tape.mean(sq)?;
    Ok(tape.scale(m, dim)?)
}

/// Records the classic objective `mean ||v(xt, t) - (x1 - x0)||^2`.
pub fn rfm_loss_nodes(
    tape: &mut Tape,
    model: &VelocityModel,
    params: &BoundParams,
    batch: &CouplingBatch,
) -> Result<LossNodes, ModelError> {
    if model.latent_dim() > 0 {
        return Err(ModelError::InvalidConfig(
            "rfm loss needs a model without latent input".into(),
        ));
    }
    let xt = tape.leaf(batch.xt.clone(), false);
    let t = tape.leaf(batch.t.clone(), false);
    let v = tape.leaf(batch.v.clone(), false);
    let pred = model.forward(tape, params, xt, t, None)?;
    let recon = mean_squared_norm(tape, pred, v)?;
    Ok(LossNodes {
        recon,
        kl: None,
        total: recon,
    })
}

/// Value of the classic objective on `batch`.
pub fn rfm_loss(model: &VelocityModel, batch: &CouplingBatch) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let params = model.params.bind(&mut tape, false);
    let nodes = rfm_loss_nodes(&mut tape, model, &params, batch)?;
    Ok(nodes.values(&tape).total)
}

/// Records the variational objective with a single reparameterized latent
/// per row: `mean recon + kl_weight * mean kl`. `eps` holds the standard
/// normal noise, `n x latent_dim`.
#[allow(clippy::too_many_arguments)]
pub fn vrfm_loss_nodes(
    tape: &mut Tape,
    model: &VelocityModel,
    model_params: &BoundParams,
    encoder: &PosteriorModel,
    encoder_params: &BoundParams,
    batch: &CouplingBatch,
    kl_weight: f64,
    eps: Matrix,
) -> Result<LossNodes, ModelError> {
    if model.latent_dim() == 0 || model.latent_dim() != encoder.latent_dim() {
        return Err(ModelError::InvalidConfig(format!(
            "latent dims disagree: velocity {} vs posterior {}",
            model.latent_dim(),
            encoder.latent_dim()
        )));
    }
    if encoder.config.data_dim != batch.dim() {
        return Err(ModelError::Shape(format!(
            "posterior data_dim {} for batch of dim {}",
            encoder.config.data_dim,
            batch.dim()
        )));
    }
    if eps.shape() != (batch.len(), model.latent_dim()) {
        return Err(ModelError::Shape(format!(
            "noise is {}x{}, expected {}x{}",
            eps.rows(),
            eps.cols(),
            batch.len(),
            model.latent_dim()
        )));
    }
    let inputs = PosteriorInputs {
        x0: tape.leaf(batch.x0.clone(), false),
        x1: tape.leaf(batch.x1.clone(), false),
        xt: tape.leaf(batch.xt.clone(), false),
        t: tape.leaf(batch.t.clone(), false),
    };
    let post = encoder.forward(tape, encoder_params, inputs)?;
    let z = reparameterize(tape, post, eps)?;
    let v = tape.leaf(batch.v.clone(), false);
    let pred = model.forward(tape, model_params, inputs.xt, inputs.t, Some(z))?;
    let recon = mean_squared_norm(tape, pred, v)?;
    let kl = kl_mean_node(tape, post)?;
    let weighted = tape.scale(kl, kl_weight)?;
    let total = tape.add(recon, weighted)?;
    Ok(LossNodes {
        recon,
        kl: Some(kl),
        total,
    })
}

fn as_nn(e: ModelError) -> NnError {
    match e {
        ModelError::Nn(e) => e,
        other => NnError::ShapeMismatch {
            op: "loss",
            detail: other.to_string(),
        },
    }
}

/// Finite-difference checks of both objectives on one batch of `batch`
/// couplings: the classic loss over the baseline velocity network, and the
/// variational loss over the velocity network and over the encoder with the
/// reparameterization noise held fixed. `max_per_param` limits the perturbed
/// coordinates of each parameter tensor to that many evenly spaced ones.
#[allow(clippy::too_many_arguments)]
pub fn loss_gradient_suite(
    source: &DistributionSpec,
    target: &DistributionSpec,
    velocity: &VelocityModelConfig,
    posterior: &PosteriorConfig,
    kl_weight: f64,
    batch: usize,
    seed: u64,
    max_per_param: Option<usize>,
) -> Result<Vec<(String, GradCheckReport)>, ModelError> {
    const H: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = sample_coupling(source, target, batch, &mut rng)
        .map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
    let baseline = VelocityModel::new(
        VelocityModelConfig {
            latent_dim: 0,
            ..velocity.clone()
        },
        &mut rng,
    )?;
    let model = VelocityModel::new(velocity.clone(), &mut rng)?;
    let encoder = PosteriorModel::new(posterior.clone(), &mut rng)?;
    let eps = standard_normal_matrix(batch, model.latent_dim(), &mut rng);
    if encoder.latent_dim() != model.latent_dim() || posterior.data_dim != velocity.data_dim {
        return Err(ModelError::InvalidConfig("velocity and posterior configs disagree".into()));
    }

    let rfm = grad_check_params(
        &baseline.params,
        |t, p| Ok(rfm_loss_nodes(t, &baseline, p, &data).map_err(as_nn)?.total),
        H,
        max_per_param,
    )?;
    let vrfm_velocity = grad_check_params(
        &model.params,
        |t, p| {
            let ep = encoder.params.bind(t, false);
            let nodes = vrfm_loss_nodes(t, &model, p, &encoder, &ep, &data, kl_weight, eps.clone()).map_err(as_nn)?;
            Ok(nodes.total)
        },
        H,
        max_per_param,
    )?;
    let vrfm_encoder = grad_check_params(
        &encoder.params,
        |t, p| {
            let mp = model.params.bind(t, false);
            let nodes = vrfm_loss_nodes(t, &model, &mp, &encoder, p, &data, kl_weight, eps.clone()).map_err(as_nn)?;
            Ok(nodes.total)
        },
        H,
        max_per_param,
    )?;
    Ok(vec![
        ("rfm.velocity".to_string(), rfm),
        ("vrfm.velocity".to_string(), vrfm_velocity),
        ("vrfm.posterior".to_string(), vrfm_encoder),
    ])
}

/// Value of the variational objective on `batch` with noise from `rng`.
pub fn vrfm_loss<R: Rng + ?Sized>(
    model: &VelocityModel,
    encoder: &PosteriorModel,
    batch: &CouplingBatch,
    kl_weight: f64,
    rng: &mut R,
) -> Result<LossValues, ModelError> {
    let mut tape = Tape::new();
    let mp = model.params.bind(&mut tape, false);
    let ep = encoder.params.bind(&mut tape, false);
    let eps = standard_normal_matrix(batch.len(), model.latent_dim(), rng);
    let nodes = vrfm_loss_nodes(&mut tape, model, &mp, encoder, &ep, batch, kl_weight, eps)?;
    Ok(nodes.values(&tape))
}
