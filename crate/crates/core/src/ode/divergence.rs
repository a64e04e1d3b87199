//! Jacobian trace of a field: exact and Skilling–Hutchinson estimates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Matrix, Tape};

use super::{Field, OdeError};

/// How divergence is computed along a likelihood integration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DivergenceMode {
    Exact,
    Hutchinson { probes: usize },
}

impl DivergenceMode {
    pub const DEFAULT_PROBES: usize = 8;

    /// Exact for small dimensions, Hutchinson otherwise.
    pub fn default_for_dim(dim: usize) -> Self {
        if dim <= 2 {
            DivergenceMode::Exact
        } else {
            DivergenceMode::Hutchinson {
                probes: Self::DEFAULT_PROBES,
            }
        }
    }
}

/// A Hutchinson trace estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEstimate {
    pub estimate: f64,
    /// Standard error of the probe mean; zero for a single probe.
    pub stderr: f64,
}

/// Draws an `rows x cols` matrix of independent ±1 entries.
pub fn rademacher<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Field value and per-row divergence. With `probes` empty the trace is
/// exact (one reverse pass per dimension); otherwise it is the mean of
/// `eps^T J eps` over the given probe matrices, each shaped like `x`.
pub fn value_and_divergence<F: Field + ?Sized>(
    field: &F,
    x: &Matrix,
    t: f64,
    probes: &[Matrix],
) -> Result<(Matrix, Vec<f64>), OdeError> {
    let (n, d) = x.shape();
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone(), true);
    let out = field.record(&mut tape, leaf, t)?;
    let value = tape.value(out).clone();
    if value.shape() != (n, d) {
        return Err(OdeError::InvalidArgument(format!(
            "field returned {}x{} for a {n}x{d} state",
            value.rows(),
            value.cols()
        )));
    }
    let mut div = vec![0.0; n];
    if probes.is_empty() {
        for j in 0..d {
            let mut seed = Matrix::zeros(n, d);
            for r in 0..n {
                seed.set(r, j, 1.0);
            }
            let grads = tape.backward_with_seed(out, seed)?;
            let g = grads.get_or_zeros(leaf, (n, d));
            for (r, acc) in div.iter_mut().enumerate() {
                *acc += g.get(r, j);
            }
        }
    } else {
        let scale = 1.0 / probes.len() as f64;
        for eps in probes {
            if eps.shape() != (n, d) {
                return Err(OdeError::InvalidArgument("probe shape differs from state".to_string()));
            }
            let grads = tape.backward_with_seed(out, eps.clone())?;
            let g = grads.get_or_zeros(leaf, (n, d));
            for (r, acc) in div.iter_mut().enumerate() {
                let quad: f64 = g.row_slice(r).iter().zip(eps.row_slice(r)).map(|(a, b)| a * b).sum();
                *acc += scale * quad;
            }
        }
    }
    Ok((value, div))
}

/// Exact divergence at a single point.
pub fn exact_divergence<F: Field + ?Sized>(field: &F, x: &[f64], t: f64) -> Result<f64, OdeError> {
    let (_, div) = value_and_divergence(field, &Matrix::row(x), t, &[])?;
    Ok(div[0])
}

/// Hutchinson estimate at a single point with `n_probes` Rademacher probes.
pub fn hutchinson_divergence<F: Field + ?Sized, R: Rng + ?Sized>(
    field: &F,
    x: &[f64],
    t: f64,
    n_probes: usize,
    rng: &mut R,
) -> Result<TraceEstimate, OdeError> {
    if n_probes == 0 {
        return Err(OdeError::InvalidArgument("need at least one probe".to_string()));
    }
    let d = x.len();
    // Each probe is one row of a replicated batch, so one reverse pass
    // yields every vector-Jacobian product.
    let rows: Vec<usize> = vec![0; n_probes];
    let states = Matrix::row(x).select_rows(&rows);
    let eps = rademacher(n_probes, d, rng);
    let mut tape = Tape::new();
    let leaf = tape.leaf(states, true);
    let out = field.record(&mut tape, leaf, t)?;
    let grads = tape.backward_with_seed(out, eps.clone())?;
    let g = grads.get_or_zeros(leaf, (n_probes, d));
    let samples: Vec<f64> = (0..n_probes)
        .map(|r| g.row_slice(r).iter().zip(eps.row_slice(r)).map(|(a, b)| a * b).sum())
        .collect();
    let mean = samples.iter().sum::<f64>() / n_probes as f64;
    let stderr = if n_probes > 1 {
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n_probes - 1) as f64;
        (var / n_probes as f64).sqrt()
    } else {
        0.0
    };
    Ok(TraceEstimate { estimate: mean, stderr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{FnField, LinearField};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_field_has_zero_divergence() {
        let field = LinearField::constant(vec![1.0, -2.0]);
        assert_eq!(exact_divergence(&field, &[0.3, 0.4], 0.5).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let est = hutchinson_divergence(&field, &[0.3, 0.4], 0.5, 10, &mut rng).unwrap();
        assert_eq!(est.estimate, 0.0);
    }

    #[test]
    fn linear_field_trace() {
        let field = LinearField::new(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]), vec![0.0, 0.0]);
        assert!((exact_divergence(&field, &[0.7, -0.2], 0.0).unwrap() - 5.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = hutchinson_divergence(&field, &[0.7, -0.2], 0.0, 1000, &mut rng).unwrap();
        assert!((est.estimate - 5.0).abs() <= 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn square_field_derivative() {
        let field = FnField::new(1, |tape: &mut Tape, x, _t| Ok(tape.square(x)?));
        assert!((exact_divergence(&field, &[3.0], 0.0).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_jacobian_single_probe_is_exact() {
        let field = LinearField::new(Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, -0.5]]), vec![1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let est = hutchinson_divergence(&field, &[0.1, 0.2], 0.0, 1, &mut rng).unwrap();
        assert_eq!(est.estimate, 1.5);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn batched_rows_are_independent() {
        let field = FnField::new(1, |tape: &mut Tape, x, _t| Ok(tape.square(x)?));
        let x = Matrix::from_rows(&[vec![1.0], vec![-2.0], vec![0.5]]);
        let (v, div) = value_and_divergence(&field, &x, 0.0, &[]).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 4.0, 0.25]);
        assert_eq!(div, vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn default_mode_by_dimension() {
        assert_eq!(DivergenceMode::default_for_dim(2), DivergenceMode::Exact);
        assert_eq!(DivergenceMode::default_for_dim(3), DivergenceMode::Hutchinson { probes: 8 });
    }
}
