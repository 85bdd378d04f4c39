use serde::{Deserialize, Serialize};

use crate::numerics::{Matrix, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: None,
        }
    }
}

/// Adam with decoupled weight decay. Reads the gradients accumulated in the
/// store.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamW {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        let zeros = || store.iter().map(|(_, p)| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
        AdamW {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Returns the gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore) -> f64 {
        let c = self.config;
        let norm = store.global_grad_norm();
        let scale = match c.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let (w, g) = (p.value.data_mut(), p.gradient.data());
            for i in 0..w.len() {
                let gi = g[i] * scale;
                let mi = c.beta1 * m.data()[i] + (1.0 - c.beta1) * gi;
                let vi = c.beta2 * v.data()[i] + (1.0 - c.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let update = (mi / bc1) / ((vi / bc2).sqrt() + c.eps);
                w[i] -= c.lr * (update + c.weight_decay * w[i]);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::new();
        let id = store.add("w", Matrix::row(&[1.0, -2.0, 0.5]));
        store.get_mut(id).gradient = Matrix::row(&[3.0, -0.1, 0.0]);
        let mut opt = AdamW::new(
            &store,
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
        );
        opt.step(&mut store);
        let w = store.value(id).data();
        // bias-corrected first step is g / (|g| + eps)
        assert!((w[0] - (1.0 - 1e-3 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);
        assert!((w[1] - (-2.0 + 1e-3 * 0.1 / (0.1 + 1e-8))).abs() < 1e-15);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut store = ParamStore::new();
        let id = store.add("w", Matrix::scalar(2.0));
        let mut opt = AdamW::new(&store, AdamWConfig::default());
        opt.step(&mut store);
        assert_eq!(store.value(id).get(0, 0), 2.0 - 1e-3 * 0.01 * 2.0);
    }

    #[test]
    fn clipping_scales_the_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("w", Matrix::row(&[0.0, 0.0]));
        store.get_mut(id).gradient = Matrix::row(&[3.0, 4.0]);
        let mut opt = AdamW::new(
            &store,
            AdamWConfig {
                clip_norm: Some(1.0),
                ..Default::default()
            },
        );
        assert_eq!(opt.step(&mut store), 5.0);
        assert_eq!(opt.steps(), 1);
    }
}
