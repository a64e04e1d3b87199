//! Per-bin velocity spread maps from analytic couplings or a trained model.

use std::path::{Path, PathBuf};

use serde::Serialize;
use vrfm_core::distributions::DistributionSpec;
use vrfm_core::metrics::{ambiguity_map, AmbiguityConfig, AmbiguityReport, AmbiguitySource};
use vrfm_core::plot::heatmap;

use super::{load_input_checkpoint, write_json, write_text, write_with};
use crate::{stream_rng, streams, CliError};

pub const GRID_FILE: &str = "grid.csv";
pub const HISTOGRAM_FILE: &str = "histograms.csv";
pub const HEATMAP_FILE: &str = "heatmap.svg";
pub const AMBIGUITY_CONFIG_FILE: &str = "ambiguity.resolved.json";

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbiguityInput {
    GroundTruth { source: DistributionSpec, target: DistributionSpec },
    Checkpoint(PathBuf),
}

#[derive(Serialize)]
struct Snapshot<'a> {
    input: &'a AmbiguityInput,
    config: &'a AmbiguityConfig,
    seed: u64,
}

/// Computes the map and writes grid CSV, probe histogram CSV and, when
/// `svg` is set, a heatmap into `out_dir`.
pub fn run_ambiguity(
    source: AmbiguitySource<'_>,
    cfg: &AmbiguityConfig,
    seed: u64,
    out_dir: &Path,
    svg: bool,
) -> Result<AmbiguityReport, CliError> {
    let report = ambiguity_map(source, cfg, &mut stream_rng(seed, streams::AMBIGUITY))?;
    write_with(&out_dir.join(GRID_FILE), |w| Ok(report.write_grid_csv(w)?))?;
    write_with(&out_dir.join(HISTOGRAM_FILE), |w| Ok(report.write_histogram_csv(w)?))?;
    if svg {
        let chart = heatmap(
            &format!("velocity spread ({})", report.source),
            "x",
            "t",
            &report.x_centers,
            &report.t_centers,
            &report.std,
        );
        write_text(&out_dir.join(HEATMAP_FILE), &chart)?;
    }
    Ok(report)
}

pub fn cmd_ambiguity(
    input: &AmbiguityInput,
    cfg: &AmbiguityConfig,
    seed: u64,
    out_dir: &Path,
    svg: bool,
) -> Result<AmbiguityReport, CliError> {
    cfg.validate().map_err(|e| CliError::Config(format!("ambiguity: {e}")))?;
    let report = match input {
        AmbiguityInput::GroundTruth { source, target } => {
            for spec in [source, target] {
                spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
            }
            if source.dim != target.dim {
                return Err(CliError::Config("source and target dims differ".into()));
            }
            run_ambiguity(AmbiguitySource::GroundTruth { source, target }, cfg, seed, out_dir, svg)?
        }
        AmbiguityInput::Checkpoint(path) => {
            let ckpt = load_input_checkpoint(path)?;
            run_ambiguity(AmbiguitySource::Model(&ckpt.velocity), cfg, seed, out_dir, svg)?
        }
    };
    write_json(
        &out_dir.join(AMBIGUITY_CONFIG_FILE),
        &Snapshot {
            input,
            config: cfg,
            seed,
        },
    )?;
    Ok(report)
}
