//! The velocity network `v(x_t, t[, z])`, the posterior encoder
//! `q(z | x0, x1, xt, t)`, latent sampling and the analytic KL term.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Activation, BoundParams, Matrix, Mlp, NnError, NodeId, ParamStore, Tape, DEFAULT_MAX_PERIOD};

/// Clamp range of the raw log-sigma output.
pub const LOG_SIGMA_RANGE: (f64, f64) = (-7.0, 2.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("model has latent_dim {0} but no latent was supplied")]
    MissingLatent(usize),
    #[error("latent supplied to a model without a latent pathway")]
    UnexpectedLatent,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("input shape mismatch: {0}")]
    Shape(String),
}

fn default_hidden() -> usize {
    64
}
fn default_embed() -> usize {
    64
}
fn default_latent_hidden() -> usize {
    128
}
fn default_decoder_layers() -> usize {
    4
}
fn default_max_period() -> f64 {
    DEFAULT_MAX_PERIOD
}

/// Architecture of the velocity network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityModelConfig {
    pub data_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_embed")]
    pub embed_dim: usize,
    /// Zero gives the baseline network with no latent input.
    #[serde(default)]
    pub latent_dim: usize,
    #[serde(default = "default_latent_hidden")]
    pub latent_hidden: usize,
    #[serde(default = "default_decoder_layers")]
    pub decoder_layers: usize,
    #[serde(default = "default_max_period")]
    pub max_period: f64,
}

impl VelocityModelConfig {
    pub fn new(data_dim: usize, latent_dim: usize) -> Self {
        Self {
            data_dim,
            hidden_dim: default_hidden(),
            embed_dim: default_embed(),
            latent_dim,
            latent_hidden: default_latent_hidden(),
            decoder_layers: default_decoder_layers(),
            max_period: default_max_period(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.data_dim == 0 {
            return Err(ModelError::InvalidConfig("data_dim must be positive".into()));
        }
        if self.hidden_dim == 0 || self.latent_hidden == 0 {
            return Err(ModelError::InvalidConfig("hidden widths must be positive".into()));
        }
        if self.embed_dim < 2 || self.embed_dim % 2 != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "embed_dim must be even and >= 2, got {}",
                self.embed_dim
            )));
        }
        if self.decoder_layers == 0 {
            return Err(ModelError::InvalidConfig("decoder_layers must be >= 1".into()));
        }
        if !(self.max_period > 1.0) {
            return Err(ModelError::InvalidConfig("max_period must exceed 1".into()));
        }
        Ok(())
    }

    /// Total number of scalar parameters, `None` on overflow.
    pub fn parameter_count(&self) -> Option<usize> {
        let c = self;
        let mut total = chain_parameter_count(&[c.embed_dim, c.hidden_dim, c.hidden_dim])?;
        total = total.checked_add(chain_parameter_count(&[
            c.data_dim.checked_mul(c.embed_dim)?,
            c.hidden_dim,
            c.hidden_dim,
        ])?)?;
        if c.latent_dim > 0 {
            total = total.checked_add(chain_parameter_count(&[
                c.latent_dim,
                c.latent_hidden,
                c.latent_hidden,
                c.latent_hidden,
            ])?)?;
        }
        let fused = c
            .hidden_dim
            .checked_mul(2)?
            .checked_add(if c.latent_dim > 0 { c.latent_hidden } else { 0 })?;
        let mut dims = vec![fused];
        dims.extend(std::iter::repeat_n(c.hidden_dim, c.decoder_layers.checked_sub(1)?));
        dims.push(c.data_dim);
        total.checked_add(chain_parameter_count(&dims)?)
    }
}

/// Weights and biases of a dense chain, `None` on overflow.
fn chain_parameter_count(dims: &[usize]) -> Option<usize> {
    dims.windows(2).try_fold(0usize, |acc, w| {
        w[0].checked_mul(w[1])?.checked_add(w[1])?.checked_add(acc)
    })
}

/// Velocity network: separate sinusoidal encoders for `t` and `x`, an
/// optional latent module, and an MLP decoder over the concatenated
/// embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityModel {
    pub config: VelocityModelConfig,
    pub params: ParamStore,
    t_encoder: Mlp,
    x_encoder: Mlp,
    z_encoder: Option<Mlp>,
    decoder: Mlp,
}

impl VelocityModel {
    pub fn new<R: Rng + ?Sized>(config: VelocityModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let c = &config;
        let mut params = ParamStore::new();
        let t_encoder = Mlp::new(
            &mut params,
            "velocity.t_encoder",
            &[c.embed_dim, c.hidden_dim, c.hidden_dim],
            Activation::Gelu,
            true,
            rng,
        )?;
        let x_encoder = Mlp::new(
            &mut params,
            "velocity.x_encoder",
            &[c.data_dim * c.embed_dim, c.hidden_dim, c.hidden_dim],
            Activation::Gelu,
            true,
            rng,
        )?;
        let z_encoder = if c.latent_dim > 0 {
            Some(Mlp::new(
                &mut params,
                "velocity.z_encoder",
                &[c.latent_dim, c.latent_hidden, c.latent_hidden, c.latent_hidden],
                Activation::Gelu,
                true,
                rng,
            )?)
        } else {
            None
        };
        let fused = 2 * c.hidden_dim + if c.latent_dim > 0 { c.latent_hidden } else { 0 };
        let mut dims = vec![fused];
        dims.extend(std::iter::repeat_n(c.hidden_dim, c.decoder_layers - 1));
        dims.push(c.data_dim);
        let decoder = Mlp::new(&mut params, "velocity.decoder", &dims, Activation::Gelu, false, rng)?;
        Ok(Self {
            config,
            params,
            t_encoder,
            x_encoder,
            z_encoder,
            decoder,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn data_dim(&self) -> usize {
        self.config.data_dim
    }

    /// Records the batched forward pass. `xt` is `n x data_dim`, `t` is
    /// `n x 1`, and `z` is `n x latent_dim` iff the model has a latent.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        xt: NodeId,
        t: NodeId,
        z: Option<NodeId>,
    ) -> Result<NodeId, ModelError> {
        let c = &self.config;
        let (n, d) = tape.value(xt).shape();
        if d != c.data_dim || tape.value(t).shape() != (n, 1) {
            return Err(ModelError::Shape(format!(
                "xt {}x{} and t {}x{} for data_dim {}",
                n,
                d,
                tape.value(t).rows(),
                tape.value(t).cols(),
                c.data_dim
            )));
        }
        let t_emb = tape.sin_embed(t, c.embed_dim, c.max_period)?;
        let t_feat = self.t_encoder.forward(tape, params, t_emb)?;
        let x_emb = tape.sin_embed(xt, c.embed_dim, c.max_period)?;
        let x_feat = self.x_encoder.forward(tape, params, x_emb)?;
        let fused = match (&self.z_encoder, z) {
            (Some(enc), Some(z)) => {
                if tape.value(z).shape() != (n, c.latent_dim) {
                    return Err(ModelError::Shape(format!(
                        "z is {}x{}, expected {}x{}",
                        tape.value(z).rows(),
                        tape.value(z).cols(),
                        n,
                        c.latent_dim
                    )));
                }
                let z_feat = enc.forward(tape, params, z)?;
                tape.concat(&[t_feat, x_feat, z_feat])?
            }
            (Some(_), None) => return Err(ModelError::MissingLatent(c.latent_dim)),
            (None, Some(_)) => return Err(ModelError::UnexpectedLatent),
            (None, None) => tape.concat(&[t_feat, x_feat])?,
        };
        Ok(self.decoder.forward(tape, params, fused)?)
    }

    /// Velocities for a batch without recording gradients.
    pub fn velocity_batch(&self, xt: &Matrix, t: &[f64], z: Option<&Matrix>) -> Result<Matrix, ModelError> {
        if t.len() != xt.rows() {
            return Err(ModelError::Shape(format!("{} times for {} rows", t.len(), xt.rows())));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.leaf(xt.clone(), false);
        let tn = tape.leaf(Matrix::column(t), false);
        let zn = z.map(|z| tape.leaf(z.clone(), false));
        let out = self.forward(&mut tape, &bound, x, tn, zn)?;
        Ok(tape.value(out).clone())
    }

    /// Velocity at a single point.
    pub fn velocity(&self, xt: &[f64], t: f64, z: Option<&[f64]>) -> Result<Vec<f64>, ModelError> {
        let z = z.map(Matrix::row);
        Ok(self
            .velocity_batch(&Matrix::row(xt), &[t], z.as_ref())?
            .into_vec())
    }
}

/// Inputs the posterior encoder may condition on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionInput {
    X0,
    X1,
    Xt,
    T,
}

impl ConditionInput {
    pub fn name(self) -> &'static str {
        match self {
            ConditionInput::X0 => "x0",
            ConditionInput::X1 => "x1",
            ConditionInput::Xt => "xt",
            ConditionInput::T => "t",
        }
    }
}

fn default_conditioning() -> Vec<ConditionInput> {
    vec![ConditionInput::X0, ConditionInput::X1, ConditionInput::Xt]
}

/// Architecture of the posterior encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorConfig {
    pub data_dim: usize,
    pub latent_dim: usize,
    #[serde(default = "default_conditioning")]
    pub conditioning: Vec<ConditionInput>,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_embed")]
    pub embed_dim: usize,
    #[serde(default = "default_max_period")]
    pub max_period: f64,
}

impl PosteriorConfig {
    pub fn new(data_dim: usize, latent_dim: usize) -> Self {
        Self {
            data_dim,
            latent_dim,
            conditioning: default_conditioning(),
            hidden_dim: default_hidden(),
            embed_dim: default_embed(),
            max_period: default_max_period(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.data_dim == 0 || self.latent_dim == 0 || self.hidden_dim == 0 {
            return Err(ModelError::InvalidConfig(
                "posterior dims must be positive".into(),
            ));
        }
        if self.conditioning.is_empty() {
            return Err(ModelError::InvalidConfig("conditioning set is empty".into()));
        }
        let mut sorted = self.conditioning.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.conditioning.len() {
            return Err(ModelError::InvalidConfig("conditioning inputs repeat".into()));
        }
        if self.embed_dim < 2 || self.embed_dim % 2 != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "embed_dim must be even and >= 2, got {}",
                self.embed_dim
            )));
        }
        Ok(())
    }

    /// Total number of scalar parameters, `None` on overflow.
    pub fn parameter_count(&self) -> Option<usize> {
        let c = self;
        let mut total = 0usize;
        for &input in &c.conditioning {
            let width = if input == ConditionInput::T { 1 } else { c.data_dim };
            total = total.checked_add(chain_parameter_count(&[
                width.checked_mul(c.embed_dim)?,
                c.hidden_dim,
                c.hidden_dim,
            ])?)?;
        }
        total = total.checked_add(chain_parameter_count(&[
            c.conditioning.len().checked_mul(c.hidden_dim)?,
            c.hidden_dim,
            c.hidden_dim,
        ])?)?;
        total.checked_add(chain_parameter_count(&[c.hidden_dim, c.latent_dim])?.checked_mul(2)?)
    }
}

/// Gaussian `N(mu, diag(sigma^2))` over the latent, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPosterior {
    pub mu: Matrix,
    pub sigma: Matrix,
}

/// Tape nodes of a posterior evaluation.
#[derive(Clone, Copy, Debug)]
pub struct PosteriorNodes {
    pub mu: NodeId,
    /// Clamped log-sigma.
    pub log_sigma: NodeId,
    pub sigma: NodeId,
}

/// Posterior encoder: one sinusoidal encoder branch per conditioning input,
/// a shared trunk and separate mean and log-sigma heads.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorModel {
    pub config: PosteriorConfig,
    pub params: ParamStore,
    branches: Vec<(ConditionInput, Mlp)>,
    trunk: Mlp,
    mu_head: Mlp,
    log_sigma_head: Mlp,
}

/// Inputs of one posterior evaluation.
#[derive(Clone, Copy, Debug)]
pub struct PosteriorInputs {
    pub x0: NodeId,
    pub x1: NodeId,
    pub xt: NodeId,
    pub t: NodeId,
}

impl PosteriorModel {
    pub fn new<R: Rng + ?Sized>(config: PosteriorConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let c = &config;
        let mut params = ParamStore::new();
        let mut branches = Vec::new();
        for &input in &c.conditioning {
            let width = if input == ConditionInput::T { 1 } else { c.data_dim };
            let mlp = Mlp::new(
                &mut params,
                &format!("posterior.{}_encoder", input.name()),
                &[width * c.embed_dim, c.hidden_dim, c.hidden_dim],
                Activation::Gelu,
                true,
                rng,
            )?;
            branches.push((input, mlp));
        }
        let trunk = Mlp::new(
            &mut params,
            "posterior.trunk",
            &[branches.len() * c.hidden_dim, c.hidden_dim, c.hidden_dim],
            Activation::Gelu,
            true,
            rng,
        )?;
        let mu_head = Mlp::new(
            &mut params,
            "posterior.mu",
            &[c.hidden_dim, c.latent_dim],
            Activation::Identity,
            false,
            rng,
        )?;
        let log_sigma_head = Mlp::new(
            &mut params,
            "posterior.log_sigma",
            &[c.hidden_dim, c.latent_dim],
            Activation::Identity,
            false,
            rng,
        )?;
        Ok(Self {
            config,
            params,
            branches,
            trunk,
            mu_head,
            log_sigma_head,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        inputs: PosteriorInputs,
    ) -> Result<PosteriorNodes, ModelError> {
        let c = &self.config;
        let mut feats = Vec::with_capacity(self.branches.len());
        for (input, mlp) in &self.branches {
            let node = match input {
                ConditionInput::X0 => inputs.x0,
                ConditionInput::X1 => inputs.x1,
                ConditionInput::Xt => inputs.xt,
                ConditionInput::T => inputs.t,
            };
            let emb = tape.sin_embed(node, c.embed_dim, c.max_period)?;
            feats.push(mlp.forward(tape, params, emb)?);
        }
        let joined = if feats.len() == 1 {
            feats[0]
        } else {
            tape.concat(&feats)?
        };
        let h = self.trunk.forward(tape, params, joined)?;
        let mu = self.mu_head.forward(tape, params, h)?;
        let raw = self.log_sigma_head.forward(tape, params, h)?;
        let log_sigma = tape.clamp(raw, LOG_SIGMA_RANGE.0, LOG_SIGMA_RANGE.1)?;
        let sigma = tape.exp(log_sigma)?;
        Ok(PosteriorNodes { mu, log_sigma, sigma })
    }

    /// Posterior for a batch of rows without recording gradients.
    pub fn posterior(&self, x0: &Matrix, x1: &Matrix, xt: &Matrix, t: &[f64]) -> Result<LatentPosterior, ModelError> {
        let n = x0.rows();
        if x1.rows() != n || xt.rows() != n || t.len() != n {
            return Err(ModelError::Shape("posterior inputs disagree in row count".into()));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let inputs = PosteriorInputs {
            x0: tape.leaf(x0.clone(), false),
            x1: tape.leaf(x1.clone(), false),
            xt: tape.leaf(xt.clone(), false),
            t: tape.leaf(Matrix::column(t), false),
        };
        let nodes = self.forward(&mut tape, &bound, inputs)?;
        Ok(LatentPosterior {
            mu: tape.value(nodes.mu).clone(),
            sigma: tape.value(nodes.sigma).clone(),
        })
    }
}

/// Standard-normal noise of the given shape.
pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Reparameterized draw `z = mu + eps * sigma`, recorded on the tape.
pub fn reparameterize(tape: &mut Tape, post: PosteriorNodes, eps: Matrix) -> Result<NodeId, NnError> {
    let e = tape.leaf(eps, false);
    let scaled = tape.mul(e, post.sigma)?;
    tape.add(post.mu, scaled)
}

/// Draws `z = mu + eps * sigma` with fresh standard-normal `eps` per entry.
pub fn sample_latent<R: Rng + ?Sized>(post: &LatentPosterior, rng: &mut R) -> Matrix {
    let eps = standard_normal_matrix(post.mu.rows(), post.mu.cols(), rng);
    let mut z = post.mu.clone();
    for ((zi, e), s) in z.as_mut_slice().iter_mut().zip(eps.as_slice()).zip(post.sigma.as_slice()) {
        *zi += e * s;
    }
    z
}

/// Per-row `KL(N(mu, sigma^2) || N(0, I))`.
pub fn kl_standard_normal(post: &LatentPosterior) -> Vec<f64> {
    (0..post.mu.rows())
        .map(|r| {
            post.mu
                .row_slice(r)
                .iter()
                .zip(post.sigma.row_slice(r))
                .map(|(&m, &s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln()))
                .sum()
        })
        .collect()
}

/// Batch mean of the per-row KL, recorded on the tape.
pub fn kl_mean_node(tape: &mut Tape, post: PosteriorNodes) -> Result<NodeId, NnError> {
    let latent = tape.value(post.mu).cols() as f64;
    let mu2 = tape.square(post.mu)?;
    let s2 = tape.square(post.sigma)?;
    let two_log = tape.scale(post.log_sigma, 2.0)?;
    let a = tape.add(mu2, s2)?;
    let b = tape.sub(a, two_log)?;
    // batch mean of the row sums = latent_dim * mean over all entries
    let m = tape.mean(b)?;
    let one = tape.leaf(Matrix::scalar(1.0), false);
    let centered = tape.sub(m, one)?;
    tape.scale(centered, 0.5 * latent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn small_velocity(data_dim: usize, latent_dim: usize) -> VelocityModel {
        let cfg = VelocityModelConfig {
            hidden_dim: 8,
            embed_dim: 8,
            latent_hidden: 12,
            ..VelocityModelConfig::new(data_dim, latent_dim)
        };
        VelocityModel::new(cfg, &mut rng()).unwrap()
    }

    #[test]
    fn parameter_count_matches_built_models() {
        for (d, l) in [(1, 0), (2, 8), (1, 4)] {
            let v = small_velocity(d, l);
            assert_eq!(v.config.parameter_count(), Some(v.params.num_values()));
            let full = VelocityModel::new(VelocityModelConfig::new(d, l), &mut rng()).unwrap();
            assert_eq!(full.config.parameter_count(), Some(full.params.num_values()));
        }
        let mut cfg = PosteriorConfig::new(2, 3);
        cfg.conditioning.push(ConditionInput::T);
        let p = PosteriorModel::new(cfg, &mut rng()).unwrap();
        assert_eq!(p.config.parameter_count(), Some(p.params.num_values()));
        let huge = VelocityModelConfig {
            hidden_dim: usize::MAX / 2,
            ..VelocityModelConfig::new(1, 0)
        };
        assert_eq!(huge.parameter_count(), None);
    }

    #[test]
    fn latent_model_maps_to_data_dim() {
        let model = VelocityModel::new(VelocityModelConfig::new(1, 4), &mut rng()).unwrap();
        let v = model.velocity(&[0.3], 0.5, Some(&[0.1, -0.2, 0.3, 0.0])).unwrap();
        assert_eq!(v.len(), 1);
        let again = model.velocity(&[0.3], 0.5, Some(&[0.1, -0.2, 0.3, 0.0])).unwrap();
        assert_eq!(v[0].to_bits(), again[0].to_bits());
    }

    #[test]
    fn latent_presence_enforced() {
        let base = small_velocity(2, 0);
        assert!(matches!(
            base.velocity(&[0.0, 0.0], 0.1, Some(&[1.0])),
            Err(ModelError::UnexpectedLatent)
        ));
        let latent = small_velocity(2, 3);
        assert!(matches!(latent.velocity(&[0.0, 0.0], 0.1, None), Err(ModelError::MissingLatent(3))));
    }

    #[test]
    fn zeroed_latent_pathway_reproduces_baseline() {
        let base = small_velocity(2, 0);
        let mut latent = small_velocity(2, 3);
        let hidden = base.config.hidden_dim;
        for p in base.params.iter() {
            let dst = latent
                .params
                .iter_mut()
                .find(|q| q.name == p.name)
                .expect("baseline parameter exists in latent model");
            if dst.shape == p.shape {
                dst.set_values(p.values());
            } else {
                // first decoder layer: baseline rows first, latent rows zeroed
                let cols = p.shape[1];
                let vals = dst.values_mut();
                vals.fill(0.0);
                vals[..2 * hidden * cols].copy_from_slice(p.values());
            }
        }
        let x = [0.4, -1.2];
        let expected = base.velocity(&x, 0.3, None).unwrap();
        for z in [[0.0, 0.0, 0.0], [3.0, -1.0, 0.5]] {
            let got = latent.velocity(&x, 0.3, Some(&z)).unwrap();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn posterior_ignores_unconditioned_inputs() {
        let cfg = PosteriorConfig {
            conditioning: vec![ConditionInput::Xt],
            hidden_dim: 8,
            embed_dim: 8,
            ..PosteriorConfig::new(1, 2)
        };
        let model = PosteriorModel::new(cfg, &mut rng()).unwrap();
        let xt = Matrix::column(&[0.25]);
        let a = model
            .posterior(&Matrix::column(&[1.0]), &Matrix::column(&[2.0]), &xt, &[0.4])
            .unwrap();
        let b = model
            .posterior(&Matrix::column(&[-5.0]), &Matrix::column(&[9.0]), &xt, &[0.4])
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sigma_respects_clamp() {
        let cfg = PosteriorConfig {
            hidden_dim: 8,
            embed_dim: 8,
            ..PosteriorConfig::new(1, 2)
        };
        let mut model = PosteriorModel::new(cfg, &mut rng()).unwrap();
        for (bias, expected) in [(50.0, 2.0f64.exp()), (-50.0, (-7.0f64).exp())] {
            let head = model.log_sigma_head.layers[0].bias;
            model.params.get_mut(head).values_mut().fill(bias);
            let post = model
                .posterior(&Matrix::column(&[0.1]), &Matrix::column(&[0.9]), &Matrix::column(&[0.5]), &[0.5])
                .unwrap();
            for &s in post.sigma.as_slice() {
                assert!((s - expected).abs() < 1e-12 * expected.max(1.0), "{s}");
            }
        }
    }

    #[test]
    fn kl_closed_forms() {
        let post = |mu: f64, sigma: f64| LatentPosterior {
            mu: Matrix::row(&[mu]),
            sigma: Matrix::row(&[sigma]),
        };
        assert_eq!(kl_standard_normal(&post(0.0, 1.0)), vec![0.0]);
        assert!((kl_standard_normal(&post(1.0, 1.0))[0] - 0.5).abs() < 1e-15);
        let expected = 0.5 * (4.0 - 1.0 - 4.0f64.ln());
        assert!((kl_standard_normal(&post(0.0, 2.0))[0] - expected).abs() < 1e-15);
        assert!((expected - 0.806_852_819_440_054_7).abs() < 1e-12);
    }

    #[test]
    fn kl_node_matches_closed_form() {
        let mu = Matrix::from_vec(2, 2, vec![0.3, -1.0, 0.0, 2.0]);
        let log_sigma = Matrix::from_vec(2, 2, vec![0.1, -0.5, 0.0, 0.7]);
        let sigma = log_sigma.map(f64::exp);
        let expected: f64 = kl_standard_normal(&LatentPosterior { mu: mu.clone(), sigma: sigma.clone() })
            .iter()
            .sum::<f64>()
            / 2.0;
        let mut tape = Tape::new();
        let nodes = PosteriorNodes {
            mu: tape.leaf(mu, false),
            log_sigma: tape.leaf(log_sigma, false),
            sigma: tape.leaf(sigma, false),
        };
        let kl = kl_mean_node(&mut tape, nodes).unwrap();
        assert!((tape.value(kl).as_slice()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn latent_draw_floor_sigma_is_mean() {
        let post = LatentPosterior {
            mu: Matrix::row(&[0.5, -2.0]),
            sigma: Matrix::row(&[(-7.0f64).exp(); 2]),
        };
        let z = sample_latent(&post, &mut rng());
        for (zi, mi) in z.as_slice().iter().zip(post.mu.as_slice()) {
            assert!((zi - mi).abs() < 5.0 * (-7.0f64).exp());
        }
        assert_eq!(sample_latent(&post, &mut rng()), z);
    }
}
