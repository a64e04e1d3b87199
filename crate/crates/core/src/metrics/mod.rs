//! Distribution-fit metrics, trajectory crossing tests and the
//! velocity-ambiguity analyzer.

mod ambiguity;
mod table;
mod transport;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::distributions::{DistError, DistributionSpec};
use crate::nn::Matrix;

pub use ambiguity::{
    ambiguity_map, pearson, AmbiguityConfig, AmbiguityReport, AmbiguitySource, ProbeHistogram, SourceTag,
};
pub use table::{aggregate_rows, parse_metric_csv, write_metric_csv, MetricRow, SeedTag, METRIC_CSV_HEADER};
pub use transport::{exact_assignment_cost, exact_wasserstein};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("sample counts differ: {left} vs {right}")]
    CountMismatch { left: usize, right: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Distribution(#[from] DistError),
    #[error(transparent)]
    Ode(#[from] crate::ode::OdeError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error("malformed metric table: {0}")]
    Parse(String),
}

/// Mean analytic target log-density of generated samples.
pub fn true_log_likelihood(generated: &Matrix, target: &DistributionSpec) -> Result<f64, MetricError> {
    if generated.rows() == 0 {
        return Err(MetricError::InvalidArgument("no generated samples".to_string()));
    }
    let ll = target.log_density_rows(generated)?;
    Ok(ll.iter().sum::<f64>() / ll.len() as f64)
}

/// Mean over test points of the log density of a Gaussian kernel mixture
/// centred on the generated samples with isotropic bandwidth `bandwidth`.
pub fn parzen_log_likelihood(generated: &Matrix, test: &Matrix, bandwidth: f64) -> Result<f64, MetricError> {
    if generated.rows() == 0 || test.rows() == 0 {
        return Err(MetricError::InvalidArgument("empty sample set".to_string()));
    }
    if generated.cols() != test.cols() {
        return Err(MetricError::DimMismatch {
            expected: generated.cols(),
            got: test.cols(),
        });
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(MetricError::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let n = generated.rows();
    let d = generated.cols() as f64;
    let inv = -0.5 / (bandwidth * bandwidth);
    let norm = -(n as f64).ln() - 0.5 * d * (2.0 * std::f64::consts::PI * bandwidth * bandwidth).ln();
    let mut exps = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..test.rows() {
        let x = test.row_slice(i);
        let mut max = f64::NEG_INFINITY;
        for (j, e) in exps.iter_mut().enumerate() {
            let sq: f64 = x.iter().zip(generated.row_slice(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            *e = inv * sq;
            max = max.max(*e);
        }
        let s: f64 = exps.iter().map(|e| (e - max).exp()).sum();
        total += max + s.ln() + norm;
    }
    Ok(total / test.rows() as f64)
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
                .collect()
        }
    }
}

/// Bandwidth search settings for the Parzen estimate.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParzenConfig {
    pub min_bandwidth: f64,
    pub max_bandwidth: f64,
    pub grid_points: usize,
    pub validation_fraction: f64,
}

impl Default for ParzenConfig {
    fn default() -> Self {
        Self {
            min_bandwidth: 0.01,
            max_bandwidth: 1.0,
            grid_points: 20,
            validation_fraction: 0.1,
        }
    }
}

/// Picks the grid bandwidth that maximizes the likelihood of the last
/// `validation_fraction` of the generated samples under kernels on the rest.
pub fn select_bandwidth(generated: &Matrix, cfg: &ParzenConfig) -> Result<f64, MetricError> {
    let n = generated.rows();
    let n_val = ((n as f64) * cfg.validation_fraction).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(MetricError::InvalidArgument(format!(
            "validation split of {n} samples at fraction {} is empty",
            cfg.validation_fraction
        )));
    }
    let fit: Vec<usize> = (0..n - n_val).collect();
    let val: Vec<usize> = (n - n_val..n).collect();
    let (fit, val) = (generated.select_rows(&fit), generated.select_rows(&val));
    let mut best = (f64::NEG_INFINITY, cfg.min_bandwidth);
    for h in log_grid(cfg.min_bandwidth, cfg.max_bandwidth, cfg.grid_points) {
        let score = parzen_log_likelihood(&fit, &val, h)?;
        if score > best.0 {
            best = (score, h);
        }
    }
    Ok(best.1)
}

/// Parzen log-likelihood of `test` with a bandwidth selected on `generated`.
pub fn parzen_with_selection(generated: &Matrix, test: &Matrix, cfg: &ParzenConfig) -> Result<(f64, f64), MetricError> {
    let h = select_bandwidth(generated, cfg)?;
    Ok((parzen_log_likelihood(generated, test, h)?, h))
}

/// One-dimensional W1 between equal-size samples by sorted pairing.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::CountMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricError::InvalidArgument("empty samples".to_string()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Sliced W1 estimate with the standard error over projections.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlicedEstimate {
    pub mean: f64,
    pub stderr: f64,
}

pub const DEFAULT_PROJECTIONS: usize = 256;

/// Mean of [`wasserstein_1d`] over uniformly random unit projections.
pub fn sliced_wasserstein<R: Rng + ?Sized>(
    a: &Matrix,
    b: &Matrix,
    n_projections: usize,
    rng: &mut R,
) -> Result<SlicedEstimate, MetricError> {
    if a.rows() != b.rows() {
        return Err(MetricError::CountMismatch {
            left: a.rows(),
            right: b.rows(),
        });
    }
    if a.cols() != b.cols() {
        return Err(MetricError::DimMismatch {
            expected: a.cols(),
            got: b.cols(),
        });
    }
    if n_projections == 0 {
        return Err(MetricError::InvalidArgument("need at least one projection".to_string()));
    }
    let d = a.cols();
    let project = |m: &Matrix, u: &[f64]| -> Vec<f64> {
        (0..m.rows())
            .map(|r| m.row_slice(r).iter().zip(u).map(|(x, w)| x * w).sum())
            .collect()
    };
    let mut values = Vec::with_capacity(n_projections);
    for _ in 0..n_projections {
        let u = loop {
            let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break g.into_iter().map(|x| x / norm).collect::<Vec<_>>();
            }
        };
        values.push(wasserstein_1d(&project(a, &u), &project(b, &u))?);
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let stderr = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
    } else {
        0.0
    };
    Ok(SlicedEstimate { mean, stderr })
}

/// W1 for 1D samples, sliced W1 otherwise.
pub fn wasserstein<R: Rng + ?Sized>(a: &Matrix, b: &Matrix, n_projections: usize, rng: &mut R) -> Result<f64, MetricError> {
    if a.cols() == 1 && b.cols() == 1 {
        wasserstein_1d(a.as_slice(), b.as_slice())
    } else {
        Ok(sliced_wasserstein(a, b, n_projections, rng)?.mean)
    }
}

/// Two-sample Kolmogorov–Smirnov result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::InvalidArgument("empty samples".to_string()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
    })
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let s: f64 = (0..20).map(|k| y.powi((2 * k + 1) * (2 * k + 1))).sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let x = (-2.0 * lambda * lambda).exp();
        let s: f64 = (1..=100)
            .map(|j: i32| {
                let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                sign * x.powi(j * j)
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Whether segments `p1-p2` and `q1-q2` share a point, endpoints included.
pub fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    }
    fn on_segment(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
        c[0] >= a[0].min(b[0]) && c[0] <= a[0].max(b[0]) && c[1] >= a[1].min(b[1]) && c[1] <= a[1].max(b[1])
    }
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

fn bbox(path: &[[f64; 2]]) -> [f64; 4] {
    path.iter().fold(
        [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        |b, p| [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])],
    )
}

fn boxes_overlap(a: &[f64; 4], b: &[f64; 4]) -> bool {
    a[0] <= b[2] && b[0] <= a[2] && a[1] <= b[3] && b[1] <= a[3]
}

/// Whether two planar polylines share a point.
pub fn polylines_intersect(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    if !boxes_overlap(&bbox(a), &bbox(b)) {
        return false;
    }
    for sa in a.windows(2) {
        let ba = bbox(sa);
        for sb in b.windows(2) {
            if boxes_overlap(&ba, &bbox(sb)) && segments_intersect(sa[0], sa[1], sb[0], sb[1]) {
                return true;
            }
        }
    }
    false
}

/// Planar polylines of every path in a trajectory: the data plane for 2D
/// states and the `(t, x)` plane for 1D states.
pub fn planar_paths(traj: &crate::ode::Trajectory) -> Result<Vec<Vec<[f64; 2]>>, MetricError> {
    let d = traj.states[0].cols();
    if d != 1 && d != 2 {
        return Err(MetricError::InvalidArgument(format!(
            "crossing test needs 1D or 2D states, got {d}"
        )));
    }
    Ok((0..traj.num_paths())
        .map(|r| {
            traj.times
                .iter()
                .zip(&traj.states)
                .map(|(&t, s)| {
                    let row = s.row_slice(r);
                    if d == 2 {
                        [row[0], row[1]]
                    } else {
                        [t, row[0]]
                    }
                })
                .collect()
        })
        .collect())
}

/// All index pairs `(i, j)`, `i < j`, of intersecting paths.
pub fn crossing_pairs(paths: &[Vec<[f64; 2]>]) -> Vec<(usize, usize)> {
    let boxes: Vec<[f64; 4]> = paths.iter().map(|p| bbox(p)).collect();
    let mut pairs = Vec::new();
    for i in 0..paths.len() {
        for j in i + 1..paths.len() {
            if boxes_overlap(&boxes[i], &boxes[j]) && polylines_intersect(&paths[i], &paths[j]) {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

pub(crate) fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 || values.iter().all(|v| *v == values[0]) {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{bimodal_1d, Builtin};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> Matrix {
        Matrix::column(v)
    }

    #[test]
    fn true_ll_at_mode_center() {
        let target = bimodal_1d(0.15);
        let got = true_log_likelihood(&col(&[-1.0, -1.0]), &target).unwrap();
        let s = 0.15f64;
        let n = |x: f64| (-(x * x) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        let want = (0.5 * n(0.0) + 0.5 * n(2.0)).ln();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn true_ll_decreases_in_tail() {
        let target = Builtin::Target1dBimodal.spec();
        let a = true_log_likelihood(&col(&[10.0]), &target).unwrap();
        let b = true_log_likelihood(&col(&[12.0]), &target).unwrap();
        assert!(a < -100.0 && b < a);
    }

    #[test]
    fn parzen_single_kernel() {
        let h = 0.3;
        let got = parzen_log_likelihood(&col(&[0.0]), &col(&[0.0]), h).unwrap();
        let want = -0.5 * (2.0 * std::f64::consts::PI * h * h).ln();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn parzen_two_kernels() {
        let got = parzen_log_likelihood(&col(&[-1.0, 1.0]), &col(&[0.0]), 1.0).unwrap();
        let want = (0.5 * 2.0 * (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn parzen_overfits_at_tiny_bandwidth() {
        let target = Builtin::Target1dBimodal.spec();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gen = target.sample(500, &mut rng).unwrap();
        let test = target.sample(500, &mut rng).unwrap();
        let good = parzen_log_likelihood(&gen, &test, 0.05).unwrap();
        let tiny = parzen_log_likelihood(&gen, &test, 1e-4).unwrap();
        assert!(tiny < good);
        let h = select_bandwidth(&gen, &ParzenConfig::default()).unwrap();
        assert!((0.01..=1.0).contains(&h));
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(0.01, 1.0, 20);
        assert_eq!(g.len(), 20);
        assert!((g[0] - 0.01).abs() < 1e-15 && (g[19] - 1.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein_1d(&[0.3, 0.1], &[0.1, 0.3]).unwrap(), 0.0);
        assert_eq!(wasserstein_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein_1d(&[0.0, 1.0], &[0.0, 3.0]).unwrap(), 1.0);
        assert!(matches!(
            wasserstein_1d(&[0.0], &[1.0, 2.0]),
            Err(MetricError::CountMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn sliced_shift_matches_expected_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.5], vec![-0.3, 2.0]]);
        let s = [0.6, -0.8];
        let b = Matrix::from_rows(
            &(0..3)
                .map(|r| vec![a.get(r, 0) + s[0], a.get(r, 1) + s[1]])
                .collect::<Vec<_>>(),
        );
        let est = sliced_wasserstein(&a, &b, 20000, &mut rng).unwrap();
        let want = 2.0 / std::f64::consts::PI;
        assert!((est.mean - want).abs() < 3.0 * est.stderr + 1e-3, "{est:?}");
        assert_eq!(sliced_wasserstein(&a, &a, 10, &mut rng).unwrap().mean, 0.0);
    }

    #[test]
    fn kolmogorov_reference_values() {
        assert!((kolmogorov_survival(1.0) - 0.269_999_671_3).abs() < 1e-8);
        assert!((kolmogorov_survival(1.36) - 0.049_44).abs() < 1e-4);
        assert!((kolmogorov_survival(0.5) - 0.963_945_243_4).abs() < 1e-8);
        let r = ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = ks_two_sample(&[0.0, 1.0], &[5.0, 6.0]).unwrap();
        assert_eq!(r.statistic, 1.0);
    }

    #[test]
    fn segment_cases() {
        assert!(segments_intersect([0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]));
        assert!(!segments_intersect([0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]));
        assert!(segments_intersect([0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [2.0, 5.0]));
        assert!(segments_intersect([0.0, 0.0], [2.0, 0.0], [1.0, 0.0], [3.0, 0.0]));
        assert!(!segments_intersect([0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]));
    }

    #[test]
    fn crossing_pairs_found() {
        let paths = vec![
            vec![[0.0, 0.0], [1.0, 1.0]],
            vec![[0.0, 1.0], [1.0, 0.0]],
            vec![[5.0, 5.0], [6.0, 5.0]],
        ];
        assert_eq!(crossing_pairs(&paths), vec![(0, 1)]);
    }

    #[test]
    fn std_of_identical_values_is_zero() {
        assert_eq!(std_dev(&[0.1; 7]), 0.0);
        assert!((std_dev(&[1.0, 3.0]) - 1.0).abs() < 1e-15);
    }
}
