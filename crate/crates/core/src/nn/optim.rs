use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::graph::Mat;
use super::params::ParamStore;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Mat>,
    second: Vec<Mat>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros = || store.iter().map(|p| Array2::zeros(p.value.dim())).collect::<Vec<_>>();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; parameters without a gradient entry are left alone.
    pub fn step(&mut self, store: &mut ParamStore, grads: &HashMap<usize, Mat>, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (id, param) in store.iter_mut().enumerate() {
            let Some(g) = grads.get(&id) else { continue };
            if param.decay && self.weight_decay > 0.0 {
                param.value *= 1.0 - lr * self.weight_decay;
            }
            let m = &mut self.first[id];
            let v = &mut self.second[id];
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            ndarray::Zip::from(&mut param.value)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
}

/// Linear warm-up from `start_lr` to `base_lr`, then multiplicative decay at milestones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupMultiStep {
    pub base_lr: f64,
    pub start_lr: f64,
    pub warmup_episodes: usize,
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl WarmupMultiStep {
    pub fn lr(&self, episode: usize) -> f64 {
        if episode < self.warmup_episodes {
            let frac = episode as f64 / self.warmup_episodes as f64;
            return self.start_lr + (self.base_lr - self.start_lr) * frac;
        }
        let passed = self.milestones.iter().filter(|m| episode >= **m).count();
        self.base_lr * self.factor.powi(passed as i32)
    }
}
