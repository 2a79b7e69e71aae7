use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::numeric::{ParamStore, Tensor};

/// `lr_min + ½(lr_init − lr_min)(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_init: f64, lr_min: f64) -> f64 {
    if total_steps == 0 {
        return lr_init;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_init - lr_min) * (1.0 + (PI * frac).cos())
}

/// Adam with decoupled weight decay applied to every parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// `θ ← θ − lr·m̂/(√v̂ + ε) − lr·wd·θ` using the gradients held in `store`.
    pub fn update(&mut self, store: &mut ParamStore, lr: f64) -> Result<(), TrainError> {
        if let Some(p) = store.iter().find(|p| !p.grad.all_finite()) {
            return Err(TrainError::NonFiniteGradient(p.name.clone()));
        }
        if self.m.is_empty() {
            self.m = store
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let (theta, g) = (p.value.data_mut(), p.grad.data());
            for (((t, &gi), mi), vi) in theta.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *t = *t - lr * (m_hat / (v_hat.sqrt() + self.eps)) - lr * self.weight_decay * *t;
            }
        }
        Ok(())
    }
}
