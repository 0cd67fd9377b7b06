//! Learning-rate schedule and the adaptive-moment optimiser.

use std::collections::BTreeMap;

use crate::params::{ParamId, ParamStore};
use crate::tensor::Mat;

/// Linear warmup from 0 to `base` over `warmup` steps, then cosine decay
/// reaching 0 at step `total - 1`.
pub fn lr_at(step: usize, total: usize, warmup: usize, base: f64) -> f64 {
    if step < warmup {
        return base * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(1).saturating_sub(warmup);
    if span == 0 {
        return base;
    }
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Adam with L2 weight decay added to the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Mat> = params.iter().map(|(_, _, p)| Mat::zeros(p.rows, p.cols)).collect();
        Self { beta1, beta2, eps, weight_decay, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update. Parameters without a gradient entry see only the decay
    /// term.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<ParamId, Mat>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<ParamId> = params.ids().collect();
        for id in ids {
            let grad = grads.get(&id);
            let p = params.value_mut(id);
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for k in 0..p.data.len() {
                let g = grad.map_or(0.0, |g| g.data[k]) + self.weight_decay * p.data[k];
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * g;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * g * g;
                let mh = m.data[k] / c1;
                let vh = v.data[k] / c2;
                p.data[k] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
