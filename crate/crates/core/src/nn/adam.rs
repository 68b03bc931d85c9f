//! Adaptive-moment optimizer over the flat parameter vector.

use serde::{Deserialize, Serialize};

use super::QParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n_params: usize) -> Self {
        Adam { cfg, t: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    /// One update with bias-corrected first/second moments. Deterministic
    /// given the optimizer state.
    pub fn step(&mut self, params: &mut QParams, grads: &QParams) {
        let g = grads.to_flat();
        let mut p = params.to_flat();
        assert_eq!(g.len(), self.m.len(), "gradient/parameter size mismatch");
        self.t += 1;
        let b1t = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for i in 0..p.len() {
            self.m[i] = self.cfg.beta1 * self.m[i] + (1.0 - self.cfg.beta1) * g[i];
            self.v[i] = self.cfg.beta2 * self.v[i] + (1.0 - self.cfg.beta2) * g[i] * g[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            p[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
        }
        params.set_from_flat(&p);
    }
}
