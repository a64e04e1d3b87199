//! Metric sweep over solver settings for a set of checkpoints.

use std::path::{Path, PathBuf};

use serde::Serialize;
use vrfm_core::metrics::{
    aggregate_rows, parzen_with_selection, true_log_likelihood, wasserstein, write_metric_csv, MetricRow, SeedTag,
};
use vrfm_core::nn::Matrix;
use vrfm_core::ode::sample_from;
use vrfm_core::training::Checkpoint;

use super::sample::draw_starts;
use super::{load_input_checkpoint, write_json, write_with};
use crate::config::EvaluationConfig;
use crate::{stream_rng, streams, CliError};

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVALUATE_CONFIG_FILE: &str = "evaluate.resolved.json";

/// Held-out target draws shared by every checkpoint.
pub fn test_set(ckpt: &Checkpoint, ev: &EvaluationConfig) -> Result<Matrix, CliError> {
    Ok(ckpt.target.sample(ev.n_test, &mut stream_rng(ev.seed, streams::TEST_SET))?)
}

fn check_compatible(ckpts: &[Checkpoint]) -> Result<(), CliError> {
    let Some(first) = ckpts.first() else {
        return Err(CliError::Usage("at least one checkpoint is required".into()));
    };
    for c in &ckpts[1..] {
        if c.data_dim() != first.data_dim() {
            return Err(CliError::Usage(format!(
                "checkpoints disagree on data dim: {} vs {}",
                first.data_dim(),
                c.data_dim()
            )));
        }
        if c.source != first.source || c.target != first.target {
            return Err(CliError::Usage("checkpoints were trained on different distributions".into()));
        }
    }
    Ok(())
}

/// One row per (checkpoint, solver) in input order. Every solver setting
/// integrates the same starts and latents.
pub fn evaluate_checkpoints(ckpts: &[Checkpoint], ev: &EvaluationConfig) -> Result<Vec<MetricRow>, CliError> {
    check_compatible(ckpts)?;
    let test = test_set(&ckpts[0], ev)?;
    let mut rows = Vec::new();
    for ckpt in ckpts {
        let model = &ckpt.velocity;
        let (x0, z) = draw_starts(
            model,
            &ckpt.source,
            ev.n_generated,
            ev.latent_sharing,
            &mut stream_rng(ckpt.seed(), streams::SAMPLE),
        )?;
        for solver in ev.solvers() {
            let out = sample_from(model, &x0, z.as_ref(), &solver)?;
            let true_ll = true_log_likelihood(&out.samples, &ckpt.target)?;
            let (parzen_ll, _) = parzen_with_selection(&out.samples, &test, &ev.parzen)?;
            let w = wasserstein(
                &out.samples,
                &test,
                ev.projections,
                &mut stream_rng(ev.seed, streams::PROJECTIONS),
            )?;
            rows.push(MetricRow {
                method: ckpt.objective.name().to_owned(),
                steps: solver.label(),
                seed: SeedTag::Seed(ckpt.seed()),
                true_ll,
                parzen_ll,
                wasserstein: w,
                nfe: out.mean_nfe(),
            });
        }
    }
    Ok(rows)
}

#[derive(Serialize)]
struct Snapshot<'a> {
    checkpoints: &'a [PathBuf],
    evaluation: &'a EvaluationConfig,
}

/// Evaluates checkpoint files and writes per-seed rows followed by mean and
/// std rows to `out_dir/metrics.csv`. Returns every written row.
pub fn cmd_evaluate(paths: &[PathBuf], ev: &EvaluationConfig, out_dir: &Path) -> Result<Vec<MetricRow>, CliError> {
    if paths.is_empty() {
        return Err(CliError::Usage("at least one checkpoint is required".into()));
    }
    let ckpts = paths
        .iter()
        .map(|p| load_input_checkpoint(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = evaluate_checkpoints(&ckpts, ev)?;
    rows.extend(aggregate_rows(&rows));
    write_with(&out_dir.join(METRICS_FILE), |w| Ok(write_metric_csv(w, &rows)?))?;
    write_json(
        &out_dir.join(EVALUATE_CONFIG_FILE),
        &Snapshot {
            checkpoints: paths,
            evaluation: ev,
        },
    )?;
    Ok(rows)
}
