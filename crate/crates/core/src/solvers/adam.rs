use serde::{Deserialize, Serialize};

use crate::game::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(0.1)
    }
}

/// Adam moments for a list of parameter blocks. Minimizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: OptimizerConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl Adam {
    pub fn new(config: OptimizerConfig, params: &[Matrix]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.nrows(), p.ncols())).collect();
        Self { config, m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Matrix], &[Matrix]) {
        (&self.m, &self.v)
    }

    pub fn update(&mut self, params: &mut [Matrix], grads: &[Matrix]) {
        self.step += 1;
        let OptimizerConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        }
    }
}
