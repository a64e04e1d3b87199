use vrfm_core::distributions::Builtin;
use vrfm_core::models::{PosteriorConfig, VelocityModelConfig};
use vrfm_core::training::{load_checkpoint, save_checkpoint, train, Checkpoint, LossRecord, Objective, TrainConfig};

fn short_config(objective: Objective, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations: 400,
        batch_size: 128,
        log_every: 20,
        seed,
        ..TrainConfig::new(objective)
    }
}

fn run(objective: Objective, seed: u64) -> (Checkpoint, Vec<LossRecord>) {
    let latent = if objective == Objective::Vrfm { 4 } else { 0 };
    let posterior = PosteriorConfig::new(1, 4);
    let out = train(
        &Builtin::Source1d.spec(),
        &Builtin::Target1dBimodal.spec(),
        &VelocityModelConfig::new(1, latent),
        (objective == Objective::Vrfm).then_some(&posterior),
        &short_config(objective, seed),
    )
    .unwrap();
    (out.checkpoint, out.history)
}

fn tail_mean(history: &[LossRecord], f: impl Fn(&LossRecord) -> f64) -> f64 {
    let tail = &history[history.len() - 5..];
    tail.iter().map(f).sum::<f64>() / tail.len() as f64
}

#[test]
fn losses_decrease_and_latent_lowers_reconstruction() {
    let (_, rfm) = run(Objective::Rfm, 3);
    let (_, vrfm) = run(Objective::Vrfm, 3);
    assert_eq!(rfm.len(), 20);
    assert!(tail_mean(&rfm, |r| r.total) < rfm[0].total);
    assert!(tail_mean(&vrfm, |r| r.total) < vrfm[0].total);
    assert!(rfm.iter().all(|r| r.kl == 0.0));
    assert!(tail_mean(&vrfm, |r| r.recon) < tail_mean(&rfm, |r| r.total));
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let (a, _) = run(Objective::Vrfm, 5);
    let (b, _) = run(Objective::Vrfm, 5);
    let (c, _) = run(Objective::Vrfm, 6);
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_ne!(a.to_bytes(), c.to_bytes());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&a, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, a);
    assert_eq!(loaded.to_bytes(), std::fs::read(&path).unwrap());
}
