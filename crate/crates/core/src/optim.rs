//! AdamW with decoupled weight decay and the linear warm-up learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Result<Self> {
        if !(config.lr > 0.0) || config.weight_decay < 0.0 {
            return Err(Error::Parameter(format!(
                "AdamW needs lr > 0 and weight_decay >= 0, got {} / {}",
                config.lr, config.weight_decay
            )));
        }
        Ok(AdamW {
            config,
            first: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update. Decay multiplies parameters by `1 − lr·λ` outside the moment estimates.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Parameter(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.numel() != self.first[i].len() {
                return Err(Error::Parameter(format!(
                    "param {i}: shape {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w *= 1.0 - c.lr * c.weight_decay;
                *w -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// `lr(t) = d_model^(-1/2) · t / warmup^(3/2)`. Linear in `t` and unbounded;
/// callers bound the number of steps.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct WarmupSchedule {
    pub d_model: usize,
    pub warmup_steps: usize,
}

impl Default for WarmupSchedule {
    fn default() -> Self {
        WarmupSchedule {
            d_model: 256,
            warmup_steps: 4000,
        }
    }
}

impl WarmupSchedule {
    pub fn lr(&self, t: u64) -> Result<f64> {
        if t < 1 {
            return Err(Error::Parameter("warm-up step must be >= 1".into()));
        }
        if self.d_model == 0 || self.warmup_steps == 0 {
            return Err(Error::Parameter(
                "d_model and warmup_steps must be positive".into(),
            ));
        }
        Ok((self.d_model as f64).powf(-0.5) * t as f64 / (self.warmup_steps as f64).powf(1.5))
    }
}
