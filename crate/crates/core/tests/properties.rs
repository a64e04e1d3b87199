use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vrfm_core::distributions::{sample_coupling, Builtin, CouplingBatch};
use vrfm_core::metrics::{
    exact_wasserstein, ks_two_sample, sliced_wasserstein, wasserstein_1d, crossing_pairs, segments_intersect,
};
use vrfm_core::nn::{grad_check, Matrix};

/// `k` equally sized samples.
fn samples(k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..40).prop_flat_map(move |n| prop::collection::vec(prop::collection::vec(-5.0..5.0f64, n), k))
}

fn unequal_samples() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-5.0..5.0f64, 1..50), prop::collection::vec(-5.0..5.0f64, 1..50))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn autodiff_matches_finite_differences(
        point in prop::collection::vec(-2.0..2.0f64, 1..6),
        scale in -3.0..3.0f64,
    ) {
        let err = grad_check(
            |t, x| {
                let g = t.gelu(x)?;
                let s = t.silu(g)?;
                let p = t.mul(s, x)?;
                let e = t.scale(p, scale)?;
                let q = t.square(e)?;
                let r = t.add(q, g)?;
                t.sum(r)
            },
            &point,
            1e-6,
        )
        .unwrap();
        prop_assert!(err <= 1e-4, "{}", err);
    }

    #[test]
    fn w1_is_symmetric_and_nonnegative(s in samples(2)) {
        let (a, b) = (&s[0], &s[1]);
        let ab = wasserstein_1d(a, b).unwrap();
        let ba = wasserstein_1d(b, a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
        prop_assert!(wasserstein_1d(a, a).unwrap() <= 1e-12);
    }

    #[test]
    fn w1_triangle_inequality(s in samples(3)) {
        let ab = wasserstein_1d(&s[0], &s[1]).unwrap();
        let bc = wasserstein_1d(&s[1], &s[2]).unwrap();
        let ac = wasserstein_1d(&s[0], &s[2]).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn sorted_pairing_is_the_optimal_assignment(pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..9)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let exact = exact_wasserstein(&Matrix::column(&a), &Matrix::column(&b)).unwrap();
        let sorted = wasserstein_1d(&a, &b).unwrap();
        prop_assert!((exact - sorted).abs() <= 1e-9, "{} vs {}", exact, sorted);
    }

    #[test]
    fn sliced_estimate_bounded_by_exact(points in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64), 2..8)) {
        let a: Vec<Vec<f64>> = points.iter().map(|p| vec![p.0, p.1]).collect();
        let b: Vec<Vec<f64>> = points.iter().map(|p| vec![p.2, p.3]).collect();
        let (a, b) = (Matrix::from_rows(&a), Matrix::from_rows(&b));
        let exact = exact_wasserstein(&a, &b).unwrap();
        let sliced = sliced_wasserstein(&a, &b, 32, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        prop_assert!(sliced.mean <= exact + 1e-9);
    }

    #[test]
    fn ks_statistic_is_symmetric_and_bounded((a, b) in unequal_samples()) {
        let ab = ks_two_sample(&a, &b).unwrap();
        let ba = ks_two_sample(&b, &a).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab.statistic));
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
        prop_assert!((ab.statistic - ba.statistic).abs() < 1e-12);
    }

    #[test]
    fn coupling_interpolates_linearly(seed in any::<u64>(), two_d in any::<bool>()) {
        let (s, t) = if two_d {
            (Builtin::Source2dCircle, Builtin::Target2dCircle)
        } else {
            (Builtin::Source1d, Builtin::Target1dBimodal)
        };
        let batch = sample_coupling(&s.spec(), &t.spec(), 16, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for r in 0..batch.len() {
            let tr = batch.t.get(r, 0);
            prop_assert!((0.0..=1.0).contains(&tr));
            for j in 0..batch.dim() {
                let (a, b) = (batch.x0.get(r, j), batch.x1.get(r, j));
                prop_assert!((batch.v.get(r, j) - (b - a)).abs() < 1e-12);
                prop_assert!((batch.xt.get(r, j) - ((1.0 - tr) * a + tr * b)).abs() < 1e-12);
            }
        }
        let rebuilt = CouplingBatch::from_parts(batch.x0.clone(), batch.x1.clone(), batch.t.as_slice()).unwrap();
        prop_assert_eq!(rebuilt, batch);
    }

    #[test]
    fn segment_intersection_is_symmetric(c in prop::array::uniform8(-2.0..2.0f64)) {
        let (p1, p2, q1, q2) = ([c[0], c[1]], [c[2], c[3]], [c[4], c[5]], [c[6], c[7]]);
        let forward = segments_intersect(p1, p2, q1, q2);
        prop_assert_eq!(forward, segments_intersect(q1, q2, p1, p2));
        prop_assert_eq!(forward, segments_intersect(p2, p1, q2, q1));
    }

    #[test]
    fn parallel_offset_paths_never_cross(offsets in prop::collection::btree_set(-100i32..100, 2..10)) {
        let paths: Vec<Vec<[f64; 2]>> = offsets
            .iter()
            .map(|&o| (0..=10).map(|k| [k as f64 / 10.0, o as f64 * 0.01 + (k as f64).sin()]).collect())
            .collect();
        prop_assert!(crossing_pairs(&paths).is_empty());
    }
}
