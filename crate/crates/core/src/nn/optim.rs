//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::{NnError, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state: step counter and per-parameter moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub hyper: AdamWConfig,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamStore, hyper: AdamWConfig) -> Self {
        Self {
            hyper,
            step: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` is the gradient of parameter `i`.
    ///
    /// Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) -> Result<(), NnError> {
        if grads.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(NnError::StateMismatch(format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if g.len() != p.len() || m.len() != p.len() {
                return Err(NnError::StateMismatch(format!(
                    "parameter `{}` has {} values, gradient {}, moments {}",
                    p.name,
                    p.len(),
                    g.len(),
                    m.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient { name: p.name.clone() });
            }
        }

        self.step += 1;
        let AdamWConfig {
            lr,
            betas: (b1, b2),
            eps,
            weight_decay,
        } = self.hyper;
        let t = self.step as i32;
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            if !p.requires_grad {
                continue;
            }
            let values = p.values_mut();
            for i in 0..values.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                let mut x = values[i];
                if weight_decay != 0.0 {
                    x -= lr * weight_decay * x;
                }
                x -= lr * m_hat / (v_hat.sqrt() + eps);
                values[i] = x;
            }
        }
        Ok(())
    }
}
