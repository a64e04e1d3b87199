//! Analytic source and target densities, independent couplings and the
//! straight-line interpolation path.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Matrix;

/// Component std of the 1D bimodal target.
pub const DEFAULT_MODE_STD_1D: f64 = 0.15;
/// Component std of the 2D circle mixtures.
pub const DEFAULT_MODE_STD_2D: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("unknown builtin distribution `{0}`")]
    UnknownBuiltin(String),
    #[error("invalid distribution: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient bin occupancy: kept {kept} of {required} required after {draws} draws")]
    InsufficientOccupancy {
        kept: usize,
        required: usize,
        draws: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    Gaussian,
    Mixture,
}

/// One isotropic Gaussian component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: f64,
}

/// A finite mixture of isotropic Gaussians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    pub dim: usize,
    pub components: Vec<Component>,
}

/// Named distributions of the synthetic experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    Source1d,
    Target1dBimodal,
    Source2dCircle,
    Target2dCircle,
}

impl Builtin {
    pub const ALL: [Builtin; 4] = [
        Builtin::Source1d,
        Builtin::Target1dBimodal,
        Builtin::Source2dCircle,
        Builtin::Target2dCircle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Source1d => "source_1d",
            Builtin::Target1dBimodal => "target_1d_bimodal",
            Builtin::Source2dCircle => "source_2d_circle",
            Builtin::Target2dCircle => "target_2d_circle",
        }
    }

    /// The spec with default component widths.
    pub fn spec(self) -> DistributionSpec {
        match self {
            Builtin::Source1d => DistributionSpec::standard_normal(1),
            Builtin::Target1dBimodal => bimodal_1d(DEFAULT_MODE_STD_1D),
            Builtin::Source2dCircle => circle_mixture(1.0 / 3.0, DEFAULT_MODE_STD_2D),
            Builtin::Target2dCircle => circle_mixture(1.0, DEFAULT_MODE_STD_2D),
        }
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Builtin {
    type Err = DistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Builtin::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| DistError::UnknownBuiltin(s.to_owned()))
    }
}

/// Looks up a builtin spec by name.
pub fn builtin_spec(name: &str) -> Result<DistributionSpec, DistError> {
    Ok(name.parse::<Builtin>()?.spec())
}

/// Equal-weight mixture at -1 and +1.
pub fn bimodal_1d(mode_std: f64) -> DistributionSpec {
    DistributionSpec {
        kind: DistributionKind::Mixture,
        dim: 1,
        components: [-1.0, 1.0]
            .into_iter()
            .map(|m| Component {
                weight: 0.5,
                mean: vec![m],
                std: mode_std,
            })
            .collect(),
    }
}

/// Six equal-weight components at angles `k * 60` degrees on a circle.
pub fn circle_mixture(radius: f64, mode_std: f64) -> DistributionSpec {
    DistributionSpec {
        kind: DistributionKind::Mixture,
        dim: 2,
        components: (0..6)
            .map(|k| {
                let angle = k as f64 * PI / 3.0;
                Component {
                    weight: 1.0 / 6.0,
                    mean: vec![radius * angle.cos(), radius * angle.sin()],
                    std: mode_std,
                }
            })
            .collect(),
    }
}

fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-density of `N(x; mean, std^2 I)`.
pub fn gaussian_log_density(x: &[f64], mean: &[f64], std: f64) -> f64 {
    let d = x.len() as f64;
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * sq / (std * std) - d * std.ln() - 0.5 * d * (2.0 * PI).ln()
}

impl DistributionSpec {
    pub fn standard_normal(dim: usize) -> Self {
        Self {
            kind: DistributionKind::Gaussian,
            dim,
            components: vec![Component {
                weight: 1.0,
                mean: vec![0.0; dim],
                std: 1.0,
            }],
        }
    }

    /// A single isotropic Gaussian.
    pub fn gaussian(mean: Vec<f64>, std: f64) -> Self {
        Self {
            kind: DistributionKind::Gaussian,
            dim: mean.len(),
            components: vec![Component {
                weight: 1.0,
                mean,
                std,
            }],
        }
    }

    /// Copy with every component std replaced.
    pub fn with_component_std(mut self, std: f64) -> Self {
        for c in &mut self.components {
            c.std = std;
        }
        self
    }

    pub fn validate(&self) -> Result<(), DistError> {
        if self.dim == 0 {
            return Err(DistError::InvalidSpec("dim must be positive".into()));
        }
        if self.components.is_empty() {
            return Err(DistError::InvalidSpec("no components".into()));
        }
        if self.kind == DistributionKind::Gaussian && self.components.len() != 1 {
            return Err(DistError::InvalidSpec(
                "gaussian kind needs exactly one component".into(),
            ));
        }
        let mut total = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            if !(c.weight > 0.0) || !c.weight.is_finite() {
                return Err(DistError::InvalidSpec(format!(
                    "component {i}: weight must be positive, got {}",
                    c.weight
                )));
            }
            if !(c.std > 0.0) || !c.std.is_finite() {
                return Err(DistError::InvalidSpec(format!(
                    "component {i}: std must be > 0, got {}",
                    c.std
                )));
            }
            if c.mean.len() != self.dim {
                return Err(DistError::InvalidSpec(format!(
                    "component {i}: mean has length {}, expected {}",
                    c.mean.len(),
                    self.dim
                )));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(DistError::InvalidSpec(format!("component {i}: non-finite mean")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(DistError::InvalidSpec(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    /// Draws `n` i.i.d. samples as an `n x dim` matrix.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Matrix, DistError> {
        self.validate()?;
        if n == 0 {
            return Err(DistError::InvalidArgument("n must be >= 1".into()));
        }
        let mut out = Matrix::zeros(n, self.dim);
        for r in 0..n {
            let c = self.pick_component(rng);
            for (x, m) in out.row_slice_mut(r).iter_mut().zip(&c.mean) {
                let e: f64 = rng.sample(StandardNormal);
                *x = m + c.std * e;
            }
        }
        Ok(out)
    }

    fn pick_component<R: Rng + ?Sized>(&self, rng: &mut R) -> &Component {
        if self.components.len() == 1 {
            return &self.components[0];
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                return c;
            }
        }
        self.components.last().expect("validated non-empty")
    }

    /// `log sum_i w_i N(x; mu_i, std_i^2 I)`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        log_sum_exp(
            self.components
                .iter()
                .map(|c| c.weight.ln() + gaussian_log_density(x, &c.mean, c.std)),
        )
    }

    /// Log-density of each row of `xs`.
    pub fn log_density_rows(&self, xs: &Matrix) -> Result<Vec<f64>, DistError> {
        if xs.cols() != self.dim {
            return Err(DistError::DimMismatch {
                expected: self.dim,
                got: xs.cols(),
            });
        }
        Ok((0..xs.rows()).map(|r| self.log_density(xs.row_slice(r))).collect())
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for c in &self.components {
            for (acc, v) in m.iter_mut().zip(&c.mean) {
                *acc += c.weight * v;
            }
        }
        m
    }

    /// Per-coordinate variance.
    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut second = vec![0.0; self.dim];
        for c in &self.components {
            for (acc, v) in second.iter_mut().zip(&c.mean) {
                *acc += c.weight * (c.std * c.std + v * v);
            }
        }
        second.iter().zip(&mean).map(|(s, m)| s - m * m).collect()
    }
}

/// Independent coupling samples with interpolated positions and velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingBatch {
    pub x0: Matrix,
    pub x1: Matrix,
    /// `n x 1` times in `[0, 1]`.
    pub t: Matrix,
    pub xt: Matrix,
    pub v: Matrix,
}

impl CouplingBatch {
    /// Fills `xt = (1 - t) x0 + t x1` and `v = x1 - x0` row by row.
    pub fn from_parts(x0: Matrix, x1: Matrix, t: &[f64]) -> Result<Self, DistError> {
        if x0.shape() != x1.shape() {
            return Err(DistError::DimMismatch {
                expected: x0.cols(),
                got: x1.cols(),
            });
        }
        if t.len() != x0.rows() {
            return Err(DistError::InvalidArgument(format!(
                "{} times for {} rows",
                t.len(),
                x0.rows()
            )));
        }
        let mut xt = Matrix::zeros(x0.rows(), x0.cols());
        let mut v = Matrix::zeros(x0.rows(), x0.cols());
        for (r, &tr) in t.iter().enumerate() {
            let (a, b) = (x0.row_slice(r), x1.row_slice(r));
            for (j, (&a0, &b1)) in a.iter().zip(b).enumerate() {
                xt.set(r, j, (1.0 - tr) * a0 + tr * b1);
                v.set(r, j, b1 - a0);
            }
        }
        Ok(Self {
            x0,
            x1,
            t: Matrix::column(t),
            xt,
            v,
        })
    }

    pub fn len(&self) -> usize {
        self.x0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x0.cols()
    }

    /// Rows in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            x0: self.x0.select_rows(indices),
            x1: self.x1.select_rows(indices),
            t: self.t.select_rows(indices),
            xt: self.xt.select_rows(indices),
            v: self.v.select_rows(indices),
        }
    }
}

fn check_dims(source: &DistributionSpec, target: &DistributionSpec) -> Result<(), DistError> {
    source.validate()?;
    target.validate()?;
    if source.dim != target.dim {
        return Err(DistError::DimMismatch {
            expected: source.dim,
            got: target.dim,
        });
    }
    Ok(())
}

/// Draws `n` independent `(x0, x1)` pairs and per-row times `t ~ U(0, 1)`.
pub fn sample_coupling<R: Rng + ?Sized>(
    source: &DistributionSpec,
    target: &DistributionSpec,
    n: usize,
    rng: &mut R,
) -> Result<CouplingBatch, DistError> {
    check_dims(source, target)?;
    let x0 = source.sample(n, rng)?;
    let x1 = target.sample(n, rng)?;
    let t: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    CouplingBatch::from_parts(x0, x1, &t)
}

/// Rejection-sampling settings for [`conditional_velocity_samples`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BinSampling {
    /// Half-width of the bin along every data coordinate.
    pub x_halfwidth: f64,
    /// Half-width of the bin along time.
    pub t_halfwidth: f64,
    /// Coupling budget per bin.
    pub max_draws: u64,
    /// Minimum number of kept velocities before the bin counts as occupied.
    pub min_kept: usize,
}

impl Default for BinSampling {
    fn default() -> Self {
        Self {
            x_halfwidth: 0.1,
            t_halfwidth: 0.025,
            max_draws: 10_000_000,
            min_kept: 30,
        }
    }
}

/// Ground-truth velocities `x1 - x0` of couplings whose `(xt, t)` falls in
/// the square bin around `(xt_center, t)`.
///
/// Times are drawn uniformly inside the bin's time interval: since `t` is
/// independent of the endpoints this is the conditional law of `t` given the
/// bin, so only the data coordinates need rejection.
pub fn conditional_velocity_samples<R: Rng + ?Sized>(
    source: &DistributionSpec,
    target: &DistributionSpec,
    xt_center: &[f64],
    t: f64,
    bins: &BinSampling,
    n_wanted: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, DistError> {
    check_dims(source, target)?;
    if xt_center.len() != source.dim {
        return Err(DistError::DimMismatch {
            expected: source.dim,
            got: xt_center.len(),
        });
    }
    if !(0.0..1.0).contains(&t) {
        return Err(DistError::InvalidArgument(format!("t must lie in [0, 1), got {t}")));
    }
    if !(bins.x_halfwidth > 0.0) || !(bins.t_halfwidth > 0.0) {
        return Err(DistError::InvalidArgument("bin half-widths must be positive".into()));
    }
    let t_lo = (t - bins.t_halfwidth).max(0.0);
    let t_hi = (t + bins.t_halfwidth).min(1.0);
    let chunk = 4096usize;
    let mut kept = Vec::with_capacity(n_wanted);
    let mut draws = 0u64;
    while kept.len() < n_wanted && draws < bins.max_draws {
        let n = chunk.min((bins.max_draws - draws) as usize);
        let x0 = source.sample(n, rng)?;
        let x1 = target.sample(n, rng)?;
        draws += n as u64;
        for r in 0..n {
            let tr = t_lo + (t_hi - t_lo) * rng.random::<f64>();
            let (a, b) = (x0.row_slice(r), x1.row_slice(r));
            let inside = a
                .iter()
                .zip(b)
                .zip(xt_center)
                .all(|((&a0, &b1), &c)| ((1.0 - tr) * a0 + tr * b1 - c).abs() <= bins.x_halfwidth);
            if inside {
                kept.push(a.iter().zip(b).map(|(a0, b1)| b1 - a0).collect());
                if kept.len() == n_wanted {
                    break;
                }
            }
        }
    }
    if kept.len() < bins.min_kept.min(n_wanted) {
        return Err(DistError::InsufficientOccupancy {
            kept: kept.len(),
            required: bins.min_kept.min(n_wanted),
            draws,
        });
    }
    Ok(kept)
}
