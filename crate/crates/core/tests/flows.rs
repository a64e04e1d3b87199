use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vrfm_core::distributions::DistributionSpec;
use vrfm_core::models::standard_normal_matrix;
use vrfm_core::nn::Matrix;
use vrfm_core::ode::{
    exact_divergence, hutchinson_divergence, integrate_dopri5_fixed, integrate_euler, log_likelihood_field,
    Dopri5Config, DivergenceMode, LinearField, SolverConfig,
};

const LOG_2PI_HALF: f64 = 0.918_938_533_204_672_7;

#[test]
fn constant_field_moves_start_to_end_at_any_step_count() {
    let x0 = [0.3, -1.2];
    let x1 = [2.5, 0.75];
    let field = LinearField::constant(vec![x1[0] - x0[0], x1[1] - x0[1]]);
    for steps in [1, 2, 3, 5, 10, 64, 100] {
        let end = integrate_euler(&field, &Matrix::row(&x0), steps).unwrap();
        for (a, b) in end.last_state().as_slice().iter().zip(x1) {
            assert!((a - b).abs() < 1e-12, "{steps} steps: {a} vs {b}");
        }
    }
}

#[test]
fn shifted_field_likelihood_matches_shifted_gaussian() {
    let x0 = vec![0.3, -1.2];
    let x1 = vec![2.5, 0.75];
    let theta: Vec<f64> = x1.iter().zip(&x0).map(|(b, a)| b - a).collect();
    let source = DistributionSpec::gaussian(x0.clone(), 1.0);
    let field = LinearField::constant(theta.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let points = standard_normal_matrix(20, 2, &mut rng);
    for solver in [SolverConfig::euler(3), SolverConfig::Dopri5(Dopri5Config::with_tolerance(1e-8))] {
        let ll = log_likelihood_field(&field, &source, &points, &solver, DivergenceMode::Exact, &mut rng).unwrap();
        for (r, got) in ll.iter().enumerate() {
            let shifted: Vec<f64> = points.row_slice(r).iter().zip(&theta).map(|(x, t)| x - t).collect();
            let want = source.log_density(&shifted);
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
    }
}

#[test]
fn contraction_likelihood_at_origin() {
    let field = LinearField::new(Matrix::from_rows(&[vec![-1.0]]), vec![0.0]);
    let ll = log_likelihood_field(
        &field,
        &DistributionSpec::standard_normal(1),
        &Matrix::row(&[0.0]),
        &SolverConfig::Dopri5(Dopri5Config::with_tolerance(1e-8)),
        DivergenceMode::Exact,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert!((ll[0] - (1.0 - LOG_2PI_HALF)).abs() < 1e-4, "{}", ll[0]);
}

/// Three-sigma coverage: about 0.3% of estimates may fall outside, so more
/// than three of 100 would indicate a biased estimate or stderr.
#[test]
fn hutchinson_covers_exact_divergence_on_random_linear_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut outside = 0;
    for _ in 0..100 {
        let a = standard_normal_matrix(3, 3, &mut rng);
        let field = LinearField::new(a, vec![0.0; 3]);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let exact = exact_divergence(&field, &x, 0.5).unwrap();
        assert!((exact - field.trace()).abs() < 1e-12);
        let est = hutchinson_divergence(&field, &x, 0.5, 1000, &mut rng).unwrap();
        if (est.estimate - exact).abs() > 3.0 * est.stderr {
            outside += 1;
        }
    }
    assert!(outside <= 3, "{outside} of 100 outside three standard errors");
}

#[test]
fn dopri5_order_on_exponential_growth() {
    let field = LinearField::new(Matrix::from_rows(&[vec![1.0]]), vec![0.0]);
    let err = |n: usize| {
        let end = integrate_dopri5_fixed(&field, &Matrix::row(&[1.0]), n).unwrap();
        (end.last_state().as_slice()[0] - std::f64::consts::E).abs()
    };
    let ns = [8, 16, 32, 64];
    let errs: Vec<f64> = ns.iter().map(|&n| err(n)).collect();
    let (lx, ly): (Vec<f64>, Vec<f64>) = ns.iter().zip(&errs).map(|(&n, &e)| ((n as f64).ln(), e.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / 4.0;
    let my = ly.iter().sum::<f64>() / 4.0;
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!(-slope >= 4.5, "order {}", -slope);
}
