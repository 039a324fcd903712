use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    steps: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = Gradients::zeros_like(params).0;
        Adam {
            config,
            steps: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) {
        self.steps += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.steps);
        let c2 = 1.0 - beta2.powi(self.steps);
        for (i, g) in grads.0.iter().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..g.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            }
            // A zero rate must leave parameters bit-identical.
            if learning_rate == 0.0 {
                continue;
            }
            let values = params.tensor_mut(i).data_mut();
            for j in 0..g.len() {
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + epsilon);
                values[j] -= learning_rate * update;
            }
        }
    }
}
