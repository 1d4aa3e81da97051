//! Adam with a linear warmup-then-decay learning-rate schedule.

use std::collections::BTreeMap;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Steps of linear warmup from 0 to `learning_rate`.
    pub warmup_steps: usize,
    /// Total steps; the rate decays linearly to 0 after warmup. Zero means
    /// a constant rate after warmup.
    pub total_steps: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            warmup_steps: 0,
            total_steps: 0,
        }
    }
}

/// Per-parameter first/second moment state, keyed by parameter name so the
/// update order never depends on map iteration.
pub struct Adam {
    config: AdamConfig,
    step: usize,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, moments: BTreeMap::new() }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Effective learning rate at the current step.
    pub fn current_rate(&self) -> f64 {
        let base = self.config.learning_rate;
        let step = self.step as f64;
        let warmup = self.config.warmup_steps as f64;
        if self.config.warmup_steps > 0 && step < warmup {
            return base * (step + 1.0) / warmup;
        }
        if self.config.total_steps > self.config.warmup_steps {
            let total = self.config.total_steps as f64;
            let frac = ((total - step) / (total - warmup)).clamp(0.0, 1.0);
            return base * frac;
        }
        base
    }

    /// Apply one update. `visit` must call the provided closure once per
    /// named parameter; parameters whose `grad` is `None` are left
    /// untouched, and taken gradients are consumed.
    pub fn step(&mut self, visit: impl FnOnce(&mut dyn FnMut(&str, &mut Tensor))) {
        let lr = self.current_rate();
        let AdamConfig { beta1, beta2, epsilon, .. } = self.config;
        let t = (self.step + 1) as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let moments = &mut self.moments;
        visit(&mut |name, tensor| {
            let Some(grad) = tensor.grad.take() else { return };
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            let data = tensor.data_mut();
            for i in 0..grad.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        });
        self.step += 1;
    }
}
