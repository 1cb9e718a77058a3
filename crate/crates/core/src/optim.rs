//! Adam with bias correction.

use crate::autodiff::TensorMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First and second moment estimates plus the shared step counter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: TensorMap,
    v: TensorMap,
    step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over every parameter. Gradients must cover the same names
    /// and shapes as `params`; moment buffers are created lazily.
    pub fn step(&mut self, cfg: &AdamConfig, params: &mut TensorMap, grads: &TensorMap) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Train(format!("no gradient supplied for parameter `{name}`")))?;
            if g.shape() != p.shape() {
                return Err(Error::Shape {
                    node: format!("adam update of `{name}`"),
                    detail: format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
                });
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            for i in 0..p.numel() {
                let gi = g.data()[i];
                let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
                let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                p.data_mut()[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
