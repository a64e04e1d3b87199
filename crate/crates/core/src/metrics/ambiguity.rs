//! Per-bin spread of velocities over a data-time grid.

use std::fmt;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{conditional_velocity_samples, BinSampling, DistError, DistributionSpec};
use crate::models::{standard_normal_matrix, VelocityModel};
use crate::nn::Matrix;

use super::{std_dev, MetricError};

/// Grid, sampling and histogram settings. Bins tile the grid: centres are
/// spaced by twice the bin half-widths. For data with more than one
/// coordinate the grid runs along the first coordinate with the others at 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmbiguityConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub bins: BinSampling,
    pub n_per_bin: usize,
    /// `(x, t)` locations whose velocity histograms are recorded.
    pub probes: Vec<[f64; 2]>,
    pub probe_samples: usize,
    pub histogram_range: [f64; 2],
    pub histogram_bins: usize,
}

impl Default for AmbiguityConfig {
    fn default() -> Self {
        Self {
            x_min: -1.4,
            x_max: 1.4,
            t_min: 0.0,
            t_max: 0.95,
            bins: BinSampling::default(),
            n_per_bin: 200,
            probes: vec![[0.0, 0.05], [0.0, 0.5], [0.0, 0.75], [-1.0, 0.95]],
            probe_samples: 2000,
            histogram_range: [-3.0, 3.0],
            histogram_bins: 30,
        }
    }
}

fn centers(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let count = ((hi - lo) / step).round() as usize + 1;
    (0..count).map(|i| lo + step * i as f64).collect()
}

impl AmbiguityConfig {
    pub fn x_centers(&self) -> Vec<f64> {
        centers(self.x_min, self.x_max, 2.0 * self.bins.x_halfwidth)
    }

    pub fn t_centers(&self) -> Vec<f64> {
        centers(self.t_min, self.t_max, 2.0 * self.bins.t_halfwidth)
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        let bad = |m: &str| Err(MetricError::InvalidArgument(m.to_string()));
        if !(self.x_max >= self.x_min) || !(self.t_max >= self.t_min) {
            return bad("grid bounds are reversed");
        }
        if !(self.t_min >= 0.0 && self.t_max < 1.0) {
            return bad("grid times must lie in [0, 1)");
        }
        if !(self.bins.x_halfwidth > 0.0 && self.bins.t_halfwidth > 0.0) {
            return bad("bin half-widths must be positive");
        }
        if self.n_per_bin < 2 || self.probe_samples < 1 {
            return bad("need at least two samples per bin");
        }
        if self.histogram_bins == 0 || !(self.histogram_range[1] > self.histogram_range[0]) {
            return bad("histogram range must be non-empty");
        }
        if self.probes.iter().any(|p| !(0.0..1.0).contains(&p[1])) {
            return bad("probe times must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Where velocities come from.
#[derive(Clone, Copy, Debug)]
pub enum AmbiguitySource<'a> {
    /// Couplings of the analytic source and target.
    GroundTruth {
        source: &'a DistributionSpec,
        target: &'a DistributionSpec,
    },
    /// A trained network; latent models get a fresh prior draw per query.
    Model(&'a VelocityModel),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    GroundTruth,
    ModelRfm,
    ModelVrfm,
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceTag::GroundTruth => "ground_truth",
            SourceTag::ModelRfm => "model_rfm",
            SourceTag::ModelVrfm => "model_vrfm",
        })
    }
}

impl AmbiguitySource<'_> {
    pub fn tag(&self) -> SourceTag {
        match self {
            AmbiguitySource::GroundTruth { .. } => SourceTag::GroundTruth,
            AmbiguitySource::Model(m) if m.latent_dim() == 0 => SourceTag::ModelRfm,
            AmbiguitySource::Model(_) => SourceTag::ModelVrfm,
        }
    }

    fn dim(&self) -> usize {
        match self {
            AmbiguitySource::GroundTruth { source, .. } => source.dim,
            AmbiguitySource::Model(m) => m.data_dim(),
        }
    }

    /// Velocity samples at a location; `Ok(None)` for an under-occupied bin
    /// along with the number kept.
    fn velocities<R: Rng + ?Sized>(
        &self,
        center: &[f64],
        t: f64,
        bins: &BinSampling,
        n: usize,
        rng: &mut R,
    ) -> Result<(Option<Vec<Vec<f64>>>, usize), MetricError> {
        match self {
            AmbiguitySource::GroundTruth { source, target } => {
                match conditional_velocity_samples(source, target, center, t, bins, n, rng) {
                    Ok(v) => {
                        let count = v.len();
                        Ok((Some(v), count))
                    }
                    Err(DistError::InsufficientOccupancy { kept, .. }) => Ok((None, kept)),
                    Err(e) => Err(e.into()),
                }
            }
            AmbiguitySource::Model(model) => {
                if model.latent_dim() == 0 {
                    // Deterministic: one evaluation stands for every query.
                    let v = model.velocity(center, t, None)?;
                    return Ok((Some(vec![v; n]), n));
                }
                let rows: Vec<usize> = vec![0; n];
                let xt = Matrix::row(center).select_rows(&rows);
                let z = standard_normal_matrix(n, model.latent_dim(), rng);
                let v = model.velocity_batch(&xt, &vec![t; n], Some(&z))?;
                Ok((Some((0..n).map(|r| v.row_slice(r).to_vec()).collect()), n))
            }
        }
    }
}

/// Velocity histogram at one probe location, over the first velocity coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeHistogram {
    pub x: f64,
    pub t: f64,
    /// Bin edges, one more than `counts`.
    pub edges: Vec<f64>,
    /// `None` when the probe bin was under-occupied.
    pub counts: Option<Vec<usize>>,
}

/// Per-bin velocity spread over the grid, rows ordered by time then x.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityReport {
    pub source: SourceTag,
    pub x_centers: Vec<f64>,
    pub t_centers: Vec<f64>,
    /// Root of the summed per-coordinate variances; `None` marks a masked bin.
    pub std: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    pub probes: Vec<ProbeHistogram>,
}

fn spread(samples: &[Vec<f64>]) -> f64 {
    let d = samples.first().map_or(0, Vec::len);
    let var: f64 = (0..d)
        .map(|j| {
            let col: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            std_dev(&col).powi(2)
        })
        .sum();
    var.sqrt()
}

fn histogram(values: impl Iterator<Item = f64>, edges: &[f64]) -> Vec<usize> {
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0; bins];
    for v in values {
        if v >= lo && v <= hi {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    counts
}

/// Collects velocity samples in every grid bin and at every probe location.
pub fn ambiguity_map<R: Rng + ?Sized>(
    source: AmbiguitySource<'_>,
    cfg: &AmbiguityConfig,
    rng: &mut R,
) -> Result<AmbiguityReport, MetricError> {
    cfg.validate()?;
    let d = source.dim();
    let at = |x: f64| -> Vec<f64> {
        let mut c = vec![0.0; d];
        c[0] = x;
        c
    };
    let x_centers = cfg.x_centers();
    let t_centers = cfg.t_centers();
    let mut std = Vec::with_capacity(x_centers.len() * t_centers.len());
    let mut counts = Vec::with_capacity(std.capacity());
    for &t in &t_centers {
        for &x in &x_centers {
            let (samples, count) = source.velocities(&at(x), t, &cfg.bins, cfg.n_per_bin, rng)?;
            std.push(samples.as_deref().map(spread));
            counts.push(count);
        }
    }
    let [lo, hi] = cfg.histogram_range;
    let edges: Vec<f64> = (0..=cfg.histogram_bins)
        .map(|i| lo + (hi - lo) * i as f64 / cfg.histogram_bins as f64)
        .collect();
    let mut probes = Vec::with_capacity(cfg.probes.len());
    for &[x, t] in &cfg.probes {
        let (samples, _) = source.velocities(&at(x), t, &cfg.bins, cfg.probe_samples, rng)?;
        probes.push(ProbeHistogram {
            x,
            t,
            edges: edges.clone(),
            counts: samples.map(|s| histogram(s.iter().map(|v| v[0]), &edges)),
        });
    }
    Ok(AmbiguityReport {
        source: source.tag(),
        x_centers,
        t_centers,
        std,
        counts,
        probes,
    })
}

impl AmbiguityReport {
    fn index(&self, x: f64, t: f64) -> Option<usize> {
        let nearest = |centers: &[f64], v: f64| -> Option<usize> {
            centers
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
                .map(|(i, _)| i)
        };
        let i = nearest(&self.x_centers, x)?;
        let k = nearest(&self.t_centers, t)?;
        Some(k * self.x_centers.len() + i)
    }

    /// Spread of the bin nearest `(x, t)`.
    pub fn std_at(&self, x: f64, t: f64) -> Option<f64> {
        self.index(x, t).and_then(|i| self.std[i])
    }

    /// Fraction of bins that are masked.
    pub fn masked_fraction(&self) -> f64 {
        self.std.iter().filter(|s| s.is_none()).count() as f64 / self.std.len().max(1) as f64
    }

    /// Pearson correlation of bin spreads over bins unmasked in both reports.
    pub fn correlation_with(&self, other: &AmbiguityReport) -> Result<f64, MetricError> {
        if self.x_centers != other.x_centers || self.t_centers != other.t_centers {
            return Err(MetricError::InvalidArgument("reports use different grids".to_string()));
        }
        let (a, b): (Vec<f64>, Vec<f64>) = self
            .std
            .iter()
            .zip(&other.std)
            .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
            .unzip();
        pearson(&a, &b)
    }

    /// Grid CSV with columns `x,t,std,count,masked`; masked bins leave `std` empty.
    pub fn write_grid_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "x,t,std,count,masked")?;
        let nx = self.x_centers.len();
        for (k, &t) in self.t_centers.iter().enumerate() {
            for (i, &x) in self.x_centers.iter().enumerate() {
                let idx = k * nx + i;
                match self.std[idx] {
                    Some(s) => writeln!(out, "{x},{t},{s},{},0", self.counts[idx])?,
                    None => writeln!(out, "{x},{t},,{},1", self.counts[idx])?,
                }
            }
        }
        Ok(())
    }

    /// Probe histogram CSV with columns `probe,x,t,bin_lo,bin_hi,count`.
    pub fn write_histogram_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "probe,x,t,bin_lo,bin_hi,count")?;
        for (p, h) in self.probes.iter().enumerate() {
            if let Some(counts) = &h.counts {
                for (k, c) in counts.iter().enumerate() {
                    writeln!(out, "{p},{},{},{},{},{c}", h.x, h.t, h.edges[k], h.edges[k + 1])?;
                }
            }
        }
        Ok(())
    }
}

/// Sample Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::CountMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(MetricError::InvalidArgument("need at least two pairs".to_string()));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(MetricError::InvalidArgument("constant input has no correlation".to_string()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Builtin;
    use crate::models::VelocityModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> AmbiguityConfig {
        AmbiguityConfig {
            x_min: -0.4,
            x_max: 0.4,
            t_min: 0.5,
            t_max: 0.8,
            n_per_bin: 50,
            probe_samples: 100,
            bins: BinSampling {
                max_draws: 200_000,
                ..BinSampling::default()
            },
            ..AmbiguityConfig::default()
        }
    }

    #[test]
    fn grid_centers_tile() {
        let cfg = AmbiguityConfig::default();
        let x = cfg.x_centers();
        let t = cfg.t_centers();
        assert_eq!(x.len(), 15);
        assert_eq!(t.len(), 20);
        assert!(x.iter().any(|v| v.abs() < 1e-12));
        assert!(t.iter().any(|v| (v - 0.75).abs() < 1e-12));
    }

    #[test]
    fn baseline_spread_is_exactly_zero() {
        let cfg = VelocityModelConfig {
            hidden_dim: 8,
            embed_dim: 4,
            ..VelocityModelConfig::new(1, 0)
        };
        let model = VelocityModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let report = ambiguity_map(AmbiguitySource::Model(&model), &small_cfg(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(report.source, SourceTag::ModelRfm);
        assert!(report.std.iter().all(|s| *s == Some(0.0)));
    }

    #[test]
    fn ground_truth_spread_is_positive_near_origin() {
        let src = Builtin::Source1d.spec();
        let tgt = Builtin::Target1dBimodal.spec();
        let report = ambiguity_map(
            AmbiguitySource::GroundTruth {
                source: &src,
                target: &tgt,
            },
            &small_cfg(),
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        assert_eq!(report.source, SourceTag::GroundTruth);
        assert!(report.std_at(0.0, 0.75).unwrap() > 0.5);
        let mut buf = Vec::new();
        report.write_grid_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + report.std.len());
    }

    #[test]
    fn masked_bins_are_not_zero_filled() {
        let src = Builtin::Source1d.spec();
        let tgt = Builtin::Target1dBimodal.spec();
        let cfg = AmbiguityConfig {
            x_min: 0.0,
            x_max: 0.0,
            t_min: 0.95,
            t_max: 0.95,
            probes: vec![],
            bins: BinSampling {
                max_draws: 20_000,
                ..BinSampling::default()
            },
            ..AmbiguityConfig::default()
        };
        let report = ambiguity_map(
            AmbiguitySource::GroundTruth {
                source: &src,
                target: &tgt,
            },
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        assert_eq!(report.std, vec![None]);
        let mut buf = Vec::new();
        report.write_grid_csv(&mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap().lines().nth(1).unwrap().to_string();
        assert_eq!(line, format!("0,0.95,,{},1", report.counts[0]));
    }

    #[test]
    fn pearson_cases() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }
}
