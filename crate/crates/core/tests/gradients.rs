use std::time::Instant;

use vrfm_core::distributions::Builtin;
use vrfm_core::models::{PosteriorConfig, VelocityModelConfig};
use vrfm_core::nn::primitive_suite;
use vrfm_core::training::loss_gradient_suite;

const TOL: f64 = 1e-4;

#[test]
fn primitives_and_layers_match_finite_differences() {
    for seed in 0..3 {
        for (name, err) in primitive_suite(seed).unwrap() {
            assert!(err <= TOL, "seed {seed} {name}: {err}");
        }
    }
}

fn check_task(source: Builtin, target: Builtin, dim: usize, latent: usize, kl_weight: f64) {
    let start = Instant::now();
    let reports = loss_gradient_suite(
        &source.spec(),
        &target.spec(),
        &VelocityModelConfig::new(dim, latent),
        &PosteriorConfig::new(dim, latent),
        kl_weight,
        4,
        7,
        Some(64),
    )
    .unwrap();
    assert_eq!(reports.len(), 3);
    for (name, report) in reports {
        assert!(report.coordinates_checked > 500, "{name}");
        assert!(report.max_relative_error <= TOL, "{name}: {report:?}");
    }
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn full_losses_one_dimensional() {
    check_task(Builtin::Source1d, Builtin::Target1dBimodal, 1, 4, 1.0);
}

#[test]
fn full_losses_two_dimensional() {
    check_task(Builtin::Source2dCircle, Builtin::Target2dCircle, 2, 8, 0.1);
}
