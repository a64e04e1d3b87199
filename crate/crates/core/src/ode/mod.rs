//! ODE integration for sampling and for likelihood evaluation through the
//! instantaneous change of variables.

mod divergence;
mod field;
mod solvers;

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{DistError, DistributionSpec};
use crate::models::{standard_normal_matrix, ModelError, VelocityModel};
use crate::nn::{Matrix, NnError};

pub use divergence::{
    exact_divergence, hutchinson_divergence, rademacher, value_and_divergence, DivergenceMode, TraceEstimate,
};
pub use field::{Direction, Field, FnField, LinearField, ModelField, Reversed};
pub use solvers::{
    dopri5_with, euler_with, integrate, integrate_dopri5, integrate_dopri5_fixed, integrate_euler, Dopri5Config,
    SolverConfig,
};

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error("exceeded {limit} function evaluations at t={}", partial.times.last().copied().unwrap_or(0.0))]
    MaxNfe { limit: usize, partial: Box<Trajectory> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Distribution(#[from] DistError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Accepted states of an integration. Each state is `n x dim`, one row per
/// trajectory integrated together.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Matrix>,
    pub nfe: usize,
}

impl Trajectory {
    pub(crate) fn start(t0: f64, x0: Matrix) -> Self {
        Self {
            times: vec![t0],
            states: vec![x0],
            nfe: 0,
        }
    }

    pub(crate) fn push(&mut self, t: f64, x: Matrix) {
        self.times.push(t);
        self.states.push(x);
    }

    pub fn last_state(&self) -> &Matrix {
        self.states.last().expect("trajectory always holds its start state")
    }

    pub fn num_paths(&self) -> usize {
        self.states[0].rows()
    }

    /// Path of trajectory `row` as `(t, x)` points.
    pub fn path(&self, row: usize) -> Vec<(f64, Vec<f64>)> {
        self.times
            .iter()
            .zip(&self.states)
            .map(|(&t, s)| (t, s.row_slice(row).to_vec()))
            .collect()
    }
}

/// Writes trajectories as CSV with columns `path,t,x0,x1,...`.
pub fn write_trajectories_csv<W: Write>(out: &mut W, trajectories: &[Trajectory]) -> Result<(), OdeError> {
    let dim = trajectories.first().map_or(0, |t| t.states[0].cols());
    let mut header = String::from("path,t");
    for j in 0..dim {
        header.push_str(&format!(",x{j}"));
    }
    writeln!(out, "{header}")?;
    let mut path_id = 0usize;
    for traj in trajectories {
        for row in 0..traj.num_paths() {
            for (t, x) in traj.times.iter().zip(&traj.states) {
                write!(out, "{path_id},{t}")?;
                for v in x.row_slice(row) {
                    write!(out, ",{v}")?;
                }
                writeln!(out)?;
            }
            path_id += 1;
        }
    }
    Ok(())
}

/// Whether each trajectory gets its own latent draw or all share one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSharing {
    #[default]
    PerTrajectory,
    Shared,
}

/// Generated samples with per-sample evaluation counts.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutput {
    pub samples: Matrix,
    pub nfe: Vec<usize>,
}

impl SampleOutput {
    pub fn mean_nfe(&self) -> f64 {
        if self.nfe.is_empty() {
            0.0
        } else {
            self.nfe.iter().sum::<usize>() as f64 / self.nfe.len() as f64
        }
    }
}

fn draw_latents<R: Rng + ?Sized>(model: &VelocityModel, n: usize, sharing: LatentSharing, rng: &mut R) -> Option<Matrix> {
    let l = model.latent_dim();
    if l == 0 {
        return None;
    }
    Some(match sharing {
        LatentSharing::PerTrajectory => standard_normal_matrix(n, l, rng),
        LatentSharing::Shared => standard_normal_matrix(1, l, rng),
    })
}

/// Draws `n` samples: all `x0` from the source first, then one prior latent
/// per trajectory for latent models, then integrates forward.
pub fn sample<R: Rng + ?Sized>(
    model: &VelocityModel,
    source: &DistributionSpec,
    n: usize,
    solver: &SolverConfig,
    rng: &mut R,
) -> Result<SampleOutput, OdeError> {
    sample_with(model, source, n, solver, LatentSharing::PerTrajectory, rng)
}

pub fn sample_with<R: Rng + ?Sized>(
    model: &VelocityModel,
    source: &DistributionSpec,
    n: usize,
    solver: &SolverConfig,
    sharing: LatentSharing,
    rng: &mut R,
) -> Result<SampleOutput, OdeError> {
    let x0 = source.sample(n, rng)?;
    let z = draw_latents(model, n, sharing, rng);
    sample_from(model, &x0, z.as_ref(), solver)
}

/// Integrates given starts and latents (`z` has one row per start, or a single shared row).
pub fn sample_from(
    model: &VelocityModel,
    x0: &Matrix,
    z: Option<&Matrix>,
    solver: &SolverConfig,
) -> Result<SampleOutput, OdeError> {
    solver.validate()?;
    let n = x0.rows();
    match solver {
        SolverConfig::Euler { steps } => {
            let field = ModelField::new(model, z.cloned());
            let traj = integrate_euler(&field, x0, *steps)?;
            Ok(SampleOutput {
                samples: traj.last_state().clone(),
                nfe: vec![*steps; n],
            })
        }
        SolverConfig::Dopri5(cfg) => {
            // Each trajectory gets its own step-size sequence.
            let d = x0.cols();
            let mut samples = Matrix::zeros(n, d);
            let mut nfe = Vec::with_capacity(n);
            for r in 0..n {
                let zr = z.map(|z| if z.rows() == 1 { z.clone() } else { z.select_rows(&[r]) });
                let field = ModelField::new(model, zr);
                let traj = integrate_dopri5(&field, &x0.select_rows(&[r]), cfg)?;
                samples.row_slice_mut(r).copy_from_slice(traj.last_state().row_slice(0));
                nfe.push(traj.nfe);
            }
            Ok(SampleOutput { samples, nfe })
        }
    }
}

/// Euler paths from `x0` for plotting and crossing analysis.
pub fn sample_paths(model: &VelocityModel, x0: &Matrix, z: Option<&Matrix>, steps: usize) -> Result<Trajectory, OdeError> {
    let field = ModelField::new(model, z.cloned());
    integrate_euler(&field, x0, steps)
}

/// Treatment of the latent when evaluating likelihood of a latent model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ZPolicy {
    /// Baseline model without a latent.
    None,
    /// Likelihood conditional on one prior draw per point.
    FixedZ,
    /// Log-mean-exp over `k` prior draws per point.
    McMarginal { k: usize },
}

impl ZPolicy {
    pub const DEFAULT_K: usize = 16;

    pub fn default_for(model: &VelocityModel) -> Self {
        if model.latent_dim() == 0 {
            ZPolicy::None
        } else {
            ZPolicy::McMarginal { k: Self::DEFAULT_K }
        }
    }
}

/// `log p1(x1)` for each row of `x1` under an arbitrary field, integrating the
/// state and accumulated divergence backwards from `t = 1` to `t = 0`.
pub fn log_likelihood_field<F: Field + ?Sized, R: Rng + ?Sized>(
    field: &F,
    source: &DistributionSpec,
    x1: &Matrix,
    solver: &SolverConfig,
    divergence: DivergenceMode,
    rng: &mut R,
) -> Result<Vec<f64>, OdeError> {
    solver.validate()?;
    solvers::check_dim(field.dim(), x1)?;
    if source.dim != x1.cols() {
        return Err(OdeError::InvalidArgument(format!(
            "source has dim {}, points have {}",
            source.dim,
            x1.cols()
        )));
    }
    let (n, d) = x1.shape();
    let probes: Vec<Matrix> = match divergence {
        DivergenceMode::Exact => Vec::new(),
        DivergenceMode::Hutchinson { probes: 0 } => {
            return Err(OdeError::InvalidArgument("need at least one probe".to_string()))
        }
        DivergenceMode::Hutchinson { probes } => (0..probes).map(|_| rademacher(n, d, rng)).collect(),
    };
    let reversed = Reversed(field);
    // Augmented state [x, a] with dx/ds = -v(x, 1-s) and da/ds = div v(x, 1-s).
    let rhs = |s: f64, state: &Matrix| -> Result<Matrix, OdeError> {
        let x = columns(state, d);
        let (v, div) = value_and_divergence(&reversed, &x, s, &probes)?;
        let mut out = Matrix::zeros(n, d + 1);
        for r in 0..n {
            out.row_slice_mut(r)[..d].copy_from_slice(v.row_slice(r));
            out.set(r, d, -div[r]);
        }
        Ok(out)
    };
    let mut start = Matrix::zeros(n, d + 1);
    for r in 0..n {
        start.row_slice_mut(r)[..d].copy_from_slice(x1.row_slice(r));
    }
    let traj = match solver {
        SolverConfig::Euler { steps } => euler_with(rhs, &start, 0.0, 1.0, *steps)?,
        SolverConfig::Dopri5(cfg) => dopri5_with(rhs, &start, 0.0, 1.0, cfg)?,
    };
    let end = traj.last_state();
    Ok((0..n)
        .map(|r| {
            let row = end.row_slice(r);
            source.log_density(&row[..d]) - row[d]
        })
        .collect())
}

fn columns(state: &Matrix, d: usize) -> Matrix {
    let n = state.rows();
    let mut x = Matrix::zeros(n, d);
    for r in 0..n {
        x.row_slice_mut(r).copy_from_slice(&state.row_slice(r)[..d]);
    }
    x
}

/// Model likelihood of each row of `x1` under the chosen latent policy.
pub fn log_likelihood<R: Rng + ?Sized>(
    model: &VelocityModel,
    source: &DistributionSpec,
    x1: &Matrix,
    solver: &SolverConfig,
    divergence: DivergenceMode,
    z_policy: ZPolicy,
    rng: &mut R,
) -> Result<Vec<f64>, OdeError> {
    let n = x1.rows();
    let l = model.latent_dim();
    match (z_policy, l) {
        (ZPolicy::None, 0) => {
            let field = ModelField::new(model, None);
            log_likelihood_field(&field, source, x1, solver, divergence, rng)
        }
        (ZPolicy::None, _) => Err(OdeError::InvalidArgument(
            "latent model needs a fixed_z or mc_marginal policy".to_string(),
        )),
        (_, 0) => Err(OdeError::InvalidArgument(
            "baseline model takes no latent policy".to_string(),
        )),
        (ZPolicy::FixedZ, _) => {
            let z = standard_normal_matrix(n, l, rng);
            let field = ModelField::new(model, Some(z));
            log_likelihood_field(&field, source, x1, solver, divergence, rng)
        }
        (ZPolicy::McMarginal { k: 0 }, _) => Err(OdeError::InvalidArgument("need k >= 1 latent draws".to_string())),
        (ZPolicy::McMarginal { k }, _) => {
            let mut draws = Vec::with_capacity(k);
            for _ in 0..k {
                let z = standard_normal_matrix(n, l, rng);
                let field = ModelField::new(model, Some(z));
                draws.push(log_likelihood_field(&field, source, x1, solver, divergence, rng)?);
            }
            Ok((0..n)
                .map(|r| log_mean_exp(draws.iter().map(|d| d[r])))
                .collect())
        }
    }
}

pub(crate) fn log_mean_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}
