//! Bias-corrected Adam with decoupled weight decay.

use std::collections::BTreeMap;

use super::layers::ParamStore;
use super::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Optimizer state: first/second moments per parameter plus the step counter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, step: 0, moments: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters present in `grads`. Weight decay is
    /// decoupled (applied directly to the parameter, not through the
    /// moments), so a zero gradient still shrinks the parameter.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<(), NnError> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (name, grad) in grads {
            let p = params.get_mut(name)?;
            if p.shape() != grad.shape() {
                return Err(NnError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: grad.shape().to_vec(),
                });
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(grad.shape()), Tensor::zeros(grad.shape())));
            for i in 0..p.numel() {
                let g = grad.data()[i];
                let mi = self.cfg.beta1 * m.data()[i] + (1.0 - self.cfg.beta1) * g;
                let vi = self.cfg.beta2 * v.data()[i] + (1.0 - self.cfg.beta2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                let theta = p.data()[i];
                p.data_mut()[i] = theta
                    - self.cfg.lr * self.cfg.weight_decay * theta
                    - self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}
