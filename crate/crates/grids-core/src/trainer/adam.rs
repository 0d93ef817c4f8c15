//! Adam optimizer with bias correction.
//!
//! Moment buffers are flat and aligned to the parameter store's insertion
//! order, which is fixed at init time; the update is
//! `theta -= lr * m_hat / (sqrt(v_hat) + eps)` with
//! `m_hat = m / (1 - beta1^t)` and `v_hat = v / (1 - beta2^t)`. All moment
//! arithmetic runs in `f64` and is rounded to the stored `f32` once per
//! update. A non-finite gradient aborts the update naming the offending
//! parameter, leaving it to the caller to decide whether the run dies.

use crate::error::TrainError;
use crate::params::ParameterStore;

/// Optimizer hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: one first and one second moment per parameter value.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Number of updates applied so far.
    pub fn updates(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients currently accumulated in
    /// `store`. `step` only labels errors.
    pub fn step(&mut self, store: &mut ParameterStore, step: usize) -> Result<(), TrainError> {
        let total = store.total_len();
        if self.m.is_empty() {
            self.m = vec![0.0; total];
            self.v = vec![0.0; total];
        } else if self.m.len() != total {
            return Err(TrainError::Model(crate::error::ModelError::LengthMismatch {
                what: "optimizer moment buffers",
                expected: self.m.len(),
                got: total,
            }));
        }

        // Validate every gradient before touching any state, so a poisoned
        // step leaves parameters and moments untouched.
        for param in store.iter() {
            if param.grads.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteGradient {
                    parameter: param.name.clone(),
                    step,
                });
            }
        }

        self.t += 1;
        let lr = f64::from(self.cfg.learning_rate);
        let b1 = f64::from(self.cfg.beta1);
        let b2 = f64::from(self.cfg.beta2);
        let eps = f64::from(self.cfg.eps);
        let m_corr = 1.0 - b1.powi(self.t as i32);
        let v_corr = 1.0 - b2.powi(self.t as i32);

        let mut offset = 0usize;
        for param in store.iter_mut() {
            for (value, grad) in param.values.iter_mut().zip(&param.grads) {
                let g = f64::from(*grad);
                let m = &mut self.m[offset];
                let v = &mut self.v[offset];
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / m_corr;
                let v_hat = *v / v_corr;
                *value = (f64::from(*value) - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
                offset += 1;
            }
        }
        Ok(())
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════════
