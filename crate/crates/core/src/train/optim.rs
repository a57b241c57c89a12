//! Adam with an exponential per-epoch learning-rate schedule.

use gsvit_tensor::{Gradients, Tensor};

use crate::config::AdamConfig;
use crate::nn::{Module, Role};

/// `lr0` scaled by `gamma` once per completed epoch.
pub fn lr_at(lr0: f64, gamma: f64, epoch: usize) -> f64 {
    (0..epoch).fold(lr0, |lr, _| lr * gamma)
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: Vec::new(), second: Vec::new() }
    }

    /// Moment buffers, one per trainable parameter in visiting order.
    pub fn moments(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.first, &self.second)
    }

    /// One update of every trainable parameter of `modules`. Parameters the
    /// loss did not reach are treated as having zero gradient.
    pub fn step(&mut self, modules: &mut [&mut dyn Module<f32>], grads: &Gradients<f32>, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut k = 0usize;
        let (first, second) = (&mut self.first, &mut self.second);
        for m in modules.iter_mut() {
            m.visit_mut("", &mut |_, t: &mut Tensor<f32>, role| {
                if role != Role::Param || !t.requires_grad() {
                    return;
                }
                if first.len() == k {
                    first.push(vec![0.0; t.numel()]);
                    second.push(vec![0.0; t.numel()]);
                }
                let g = grads.get(t).map(|g| g.data().to_vec());
                let (m1, m2) = (&mut first[k], &mut second[k]);
                for (i, p) in t.data_mut().iter_mut().enumerate() {
                    let gi = g.as_ref().map_or(0.0, |g| f64::from(g[i]));
                    let a = beta1 * f64::from(m1[i]) + (1.0 - beta1) * gi;
                    let b = beta2 * f64::from(m2[i]) + (1.0 - beta2) * gi * gi;
                    m1[i] = a as f32;
                    m2[i] = b as f32;
                    let update = lr * (a / bc1) / ((b / bc2).sqrt() + eps);
                    *p = (f64::from(*p) - update) as f32;
                }
                k += 1;
            });
        }
    }
}
