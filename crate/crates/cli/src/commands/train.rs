//! Training runs: checkpoint, loss history and resolved configuration.

use std::path::PathBuf;

use vrfm_core::training::{save_checkpoint, train, write_loss_csv, Checkpoint, LossRecord, Objective};

use super::{write_text, write_with};
use crate::config::ExperimentConfig;
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const CONFIG_FILE: &str = "config.resolved.json";

#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub dir: PathBuf,
    pub checkpoint: Checkpoint,
    pub history: Vec<LossRecord>,
}

impl TrainedRun {
    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join(CHECKPOINT_FILE)
    }
}

/// Trains one (objective, seed) cell into `run_dir(objective, seed)`.
pub fn train_run(cfg: &ExperimentConfig, objective: Objective, seed: u64) -> Result<TrainedRun, CliError> {
    let (source, target) = cfg.specs();
    let posterior = (objective == Objective::Vrfm).then(|| cfg.posterior_config());
    let outcome = train(
        &source,
        &target,
        &cfg.velocity_config(objective),
        posterior.as_ref(),
        &cfg.train_config(objective, seed),
    )?;
    let dir = cfg.run_dir(objective, seed);
    let mut snapshot = cfg.clone();
    snapshot.objective = objective;
    snapshot.seeds = vec![seed];
    write_text(&dir.join(CONFIG_FILE), &snapshot.canonical_json())?;
    std::fs::create_dir_all(&dir)?;
    save_checkpoint(&outcome.checkpoint, dir.join(CHECKPOINT_FILE))?;
    write_with(&dir.join(LOSS_FILE), |out| Ok(write_loss_csv(&outcome.history, out)?))?;
    Ok(TrainedRun {
        dir,
        checkpoint: outcome.checkpoint,
        history: outcome.history,
    })
}

/// Trains `cfg.objective` for every configured seed, or only `seeds` when given.
pub fn cmd_train(cfg: &ExperimentConfig, seeds: Option<&[u64]>) -> Result<Vec<TrainedRun>, CliError> {
    let seeds = seeds.unwrap_or(&cfg.seeds);
    if seeds.is_empty() {
        return Err(CliError::Usage("no seeds to train".into()));
    }
    seeds.iter().map(|&s| train_run(cfg, cfg.objective, s)).collect()
}
