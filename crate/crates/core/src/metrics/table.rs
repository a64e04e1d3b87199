//! Metric rows and their CSV form.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use super::MetricError;

pub const METRIC_CSV_HEADER: &str = "method,steps,seed,true_ll,parzen_ll,wasserstein,nfe";

/// Seed column: a run seed or an aggregate over seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum SeedTag {
    Seed(u64),
    Mean,
    Std,
}

impl fmt::Display for SeedTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeedTag::Seed(s) => write!(f, "{s}"),
            SeedTag::Mean => f.write_str("mean"),
            SeedTag::Std => f.write_str("std"),
        }
    }
}

impl FromStr for SeedTag {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(SeedTag::Mean),
            "std" => Ok(SeedTag::Std),
            _ => s
                .parse()
                .map(SeedTag::Seed)
                .map_err(|_| MetricError::Parse(format!("bad seed column {s:?}"))),
        }
    }
}

/// One evaluation cell: method, solver setting and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub method: String,
    /// Euler step count or `adaptive`.
    pub steps: String,
    pub seed: SeedTag,
    pub true_ll: f64,
    pub parzen_ll: f64,
    pub wasserstein: f64,
    pub nfe: f64,
}

impl MetricRow {
    fn values(&self) -> [f64; 4] {
        [self.true_ll, self.parzen_ll, self.wasserstein, self.nfe]
    }
}

pub fn write_metric_csv<W: Write>(out: &mut W, rows: &[MetricRow]) -> std::io::Result<()> {
    writeln!(out, "{METRIC_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method, r.steps, r.seed, r.true_ll, r.parzen_ll, r.wasserstein, r.nfe
        )?;
    }
    Ok(())
}

pub fn parse_metric_csv(text: &str) -> Result<Vec<MetricRow>, MetricError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == METRIC_CSV_HEADER => {}
        other => return Err(MetricError::Parse(format!("unexpected header {other:?}"))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.trim_end().split(',').collect();
            if f.len() != 7 {
                return Err(MetricError::Parse(format!("row {} has {} fields", i + 1, f.len())));
            }
            let num = |s: &str| -> Result<f64, MetricError> {
                s.parse()
                    .map_err(|_| MetricError::Parse(format!("row {}: bad number {s:?}", i + 1)))
            };
            Ok(MetricRow {
                method: f[0].to_string(),
                steps: f[1].to_string(),
                seed: f[2].parse()?,
                true_ll: num(f[3])?,
                parzen_ll: num(f[4])?,
                wasserstein: num(f[5])?,
                nfe: num(f[6])?,
            })
        })
        .collect()
}

/// Mean and standard deviation rows per `(method, steps)` over seeded rows,
/// in first-appearance order.
pub fn aggregate_rows(rows: &[MetricRow]) -> Vec<MetricRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows.iter().filter(|r| matches!(r.seed, SeedTag::Seed(_))) {
        let key = (r.method.clone(), r.steps.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut out = Vec::with_capacity(2 * keys.len());
    for (method, steps) in keys {
        let group: Vec<[f64; 4]> = rows
            .iter()
            .filter(|r| matches!(r.seed, SeedTag::Seed(_)) && r.method == method && r.steps == steps)
            .map(MetricRow::values)
            .collect();
        let n = group.len() as f64;
        let mut mean = [0.0; 4];
        for g in &group {
            for k in 0..4 {
                mean[k] += g[k] / n;
            }
        }
        let mut std = [0.0; 4];
        if group.len() > 1 {
            for k in 0..4 {
                std[k] = (group.iter().map(|g| (g[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            }
        }
        for (tag, v) in [(SeedTag::Mean, mean), (SeedTag::Std, std)] {
            out.push(MetricRow {
                method: method.clone(),
                steps: steps.clone(),
                seed: tag,
                true_ll: v[0],
                parzen_ll: v[1],
                wasserstein: v[2],
                nfe: v[3],
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, v: f64) -> MetricRow {
        MetricRow {
            method: "vrfm".into(),
            steps: "2".into(),
            seed: SeedTag::Seed(seed),
            true_ll: v,
            parzen_ll: -v,
            wasserstein: 0.5,
            nfe: 2.0,
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row(0, 1.25), row(1, -0.1)];
        let mut buf = Vec::new();
        write_metric_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,steps,seed,true_ll,parzen_ll,wasserstein,nfe\n"));
        assert_eq!(parse_metric_csv(&text).unwrap(), rows);
    }

    #[test]
    fn aggregates_mean_and_std() {
        let agg = aggregate_rows(&[row(0, 1.0), row(1, 2.0), row(2, 3.0)]);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].seed, SeedTag::Mean);
        assert!((agg[0].true_ll - 2.0).abs() < 1e-15);
        assert_eq!(agg[1].seed, SeedTag::Std);
        assert!((agg[1].true_ll - 1.0).abs() < 1e-15);
        assert_eq!(agg[1].wasserstein, 0.0);
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(parse_metric_csv("a,b\n").is_err());
    }
}
