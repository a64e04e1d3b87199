//! Generation from a checkpoint with optional per-trajectory export.

use std::path::{Path, PathBuf};

use serde::Serialize;
use vrfm_core::models::{standard_normal_matrix, VelocityModel};
use vrfm_core::nn::Matrix;
use vrfm_core::ode::{
    integrate_dopri5, sample_from, sample_paths, write_trajectories_csv, LatentSharing, ModelField, SolverConfig,
    Trajectory,
};

use super::{load_input_checkpoint, write_json, write_matrix_csv, write_with};
use crate::{stream_rng, streams, CliError};

pub const SAMPLES_FILE: &str = "samples.csv";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const SAMPLE_CONFIG_FILE: &str = "sample.resolved.json";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleOptions {
    pub n: usize,
    pub solver: SolverConfig,
    /// Number of leading samples whose solver paths are exported.
    pub trajectories: usize,
    pub latent_sharing: LatentSharing,
    /// Defaults to the checkpoint's training seed.
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleReport {
    pub samples: Matrix,
    pub nfe: Vec<usize>,
    pub mean_nfe: f64,
    pub trajectories: Vec<Trajectory>,
}

/// Source draws for `n` trajectories followed by their latents.
pub fn draw_starts(
    model: &VelocityModel,
    source: &vrfm_core::distributions::DistributionSpec,
    n: usize,
    sharing: LatentSharing,
    rng: &mut impl rand::Rng,
) -> Result<(Matrix, Option<Matrix>), CliError> {
    let x0 = source.sample(n, rng)?;
    let l = model.latent_dim();
    let z = (l > 0).then(|| match sharing {
        LatentSharing::PerTrajectory => standard_normal_matrix(n, l, rng),
        LatentSharing::Shared => standard_normal_matrix(1, l, rng),
    });
    Ok((x0, z))
}

fn latent_rows(z: Option<&Matrix>, rows: &[usize]) -> Option<Matrix> {
    z.map(|z| if z.rows() == 1 { z.clone() } else { z.select_rows(rows) })
}

/// Accepted solver states for the given starts: one batched trajectory for
/// Euler, one trajectory per start for the adaptive solver.
pub fn solver_paths(
    model: &VelocityModel,
    x0: &Matrix,
    z: Option<&Matrix>,
    solver: &SolverConfig,
) -> Result<Vec<Trajectory>, CliError> {
    match solver {
        SolverConfig::Euler { steps } => Ok(vec![sample_paths(model, x0, z, *steps)?]),
        SolverConfig::Dopri5(cfg) => (0..x0.rows())
            .map(|r| {
                let field = ModelField::new(model, latent_rows(z, &[r]));
                Ok(integrate_dopri5(&field, &x0.select_rows(&[r]), cfg)?)
            })
            .collect(),
    }
}

#[derive(Serialize)]
struct Snapshot<'a> {
    checkpoint: &'a Path,
    #[serde(flatten)]
    options: &'a SampleOptions,
}

pub fn cmd_sample(checkpoint: &Path, opts: &SampleOptions) -> Result<SampleReport, CliError> {
    if opts.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    if opts.trajectories > opts.n {
        return Err(CliError::Usage("--trajectories cannot exceed --n".into()));
    }
    opts.solver.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let ckpt = load_input_checkpoint(checkpoint)?;
    let seed = opts.seed.unwrap_or(ckpt.seed());
    let model = &ckpt.velocity;
    let mut rng = stream_rng(seed, streams::SAMPLE);
    let (x0, z) = draw_starts(model, &ckpt.source, opts.n, opts.latent_sharing, &mut rng)?;
    let out = sample_from(model, &x0, z.as_ref(), &opts.solver)?;
    let trajectories = if opts.trajectories > 0 {
        let rows: Vec<usize> = (0..opts.trajectories).collect();
        let zk = latent_rows(z.as_ref(), &rows);
        solver_paths(model, &x0.select_rows(&rows), zk.as_ref(), &opts.solver)?
    } else {
        Vec::new()
    };

    write_matrix_csv(&opts.out_dir.join(SAMPLES_FILE), &out.samples)?;
    if !trajectories.is_empty() {
        write_with(&opts.out_dir.join(TRAJECTORIES_FILE), |w| {
            Ok(write_trajectories_csv(w, &trajectories)?)
        })?;
    }
    let resolved = SampleOptions {
        seed: Some(seed),
        ..opts.clone()
    };
    write_json(
        &opts.out_dir.join(SAMPLE_CONFIG_FILE),
        &Snapshot {
            checkpoint,
            options: &resolved,
        },
    )?;
    let mean_nfe = out.mean_nfe();
    Ok(SampleReport {
        samples: out.samples,
        nfe: out.nfe,
        mean_nfe,
        trajectories,
    })
}
