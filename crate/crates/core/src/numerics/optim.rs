use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam with coupled (L2) weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    fn ensure_shapes(&mut self, params: &[&mut [f64]]) -> Result<()> {
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second_moment = self.first_moment.clone();
            return Ok(());
        }
        let ok = self.first_moment.len() == params.len()
            && self
                .first_moment
                .iter()
                .zip(params)
                .all(|(m, p)| m.len() == p.len());
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "optimizer state does not match parameter shapes",
            ))
        }
    }

    /// One Adam update. Non-finite gradients abort the step before anything is modified.
    pub fn step(&mut self, mut params: Vec<&mut [f64]>, grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::config("gradient shapes do not match parameters"));
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::numeric(format!(
                "non-finite gradient at optimizer step {}",
                self.step + 1
            )));
        }
        self.ensure_shapes(&params)?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, wd, lr) = (self.beta1, self.beta2, self.eps, self.weight_decay, self.lr);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for i in 0..p.len() {
                let gi = g[i] + wd * p[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Exponential per-epoch learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
}

impl LrSchedule {
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.initial * self.decay.powi(epoch as i32)
    }
}
