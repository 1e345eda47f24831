//! Adam and Nadam.
//!
//! Adam:
//! ```text
//! m ← β1·m + (1-β1)·g        v ← β2·v + (1-β2)·g²
//! θ ← θ - lr · m̂ / (√v̂ + ε)  with m̂ = m/(1-β1^t), v̂ = v/(1-β2^t)
//! ```
//! Nadam replaces the numerator with the Nesterov look-ahead
//! `β1·m̂ + (1-β1)/(1-β1^t) · g`.

use serde::{Deserialize, Serialize};

use super::{ParamSet, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Nadam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self { kind, learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState<F> {
    pub config: OptimizerConfig,
    pub step: u64,
    m: ParamSet<F>,
    v: ParamSet<F>,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(config: OptimizerConfig, params: &ParamSet<F>) -> Self {
        Self { config, step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    /// Applies one update. Rows marked frozen are left untouched.
    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &ParamSet<F>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let (one_b1, one_b2) = (F::one() - b1, F::one() - b2);
        let bc1 = F::one() - b1.powi(t);
        let bc2 = F::one() - b2.powi(t);
        let lr = F::lit(c.learning_rate);
        let eps = F::lit(c.eps);
        let nesterov_g = one_b1 / bc1;
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let frozen = params.param(id).frozen_rows * params[id].cols();
            let g = grads[id].data();
            let m = self.m[id].data_mut();
            let v = self.v[id].data_mut();
            let p = params[id].data_mut();
            for i in frozen..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let num = match c.kind {
                    OptimizerKind::Adam => m_hat,
                    OptimizerKind::Nadam => b1 * m_hat + nesterov_g * g[i],
                };
                p[i] -= lr * num / (v_hat.sqrt() + eps);
            }
        }
    }
}
