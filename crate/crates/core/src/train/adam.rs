//! Adam with bias correction, no weight decay.

use crate::error::{Error, Result};
use crate::model::Parameter;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment buffers mirroring a parameter list.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub cfg: AdamConfig,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[Parameter], cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            m: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over all parameters from their `grad_accum` buffers.
    /// A non-finite gradient aborts with the offending parameter's name.
    pub fn step(&mut self, params: &mut [Parameter], lr: f64) -> Result<()> {
        for p in params.iter() {
            if p.grad_accum.data().iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient in parameter '{}'",
                    p.name
                )));
            }
        }
        self.t += 1;
        for (i, p) in params.iter_mut().enumerate() {
            adam_update(
                p.value.data_mut(),
                p.grad_accum.data(),
                &mut self.m[i],
                &mut self.v[i],
                self.t,
                lr,
                &self.cfg,
            );
        }
        Ok(())
    }
}

/// The bias-corrected update on one flat buffer.
pub fn adam_update(
    param: &mut [f32],
    grad: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    t: u64,
    lr: f64,
    cfg: &AdamConfig,
) {
    let b1 = cfg.beta1 as f32;
    let b2 = cfg.beta2 as f32;
    let bc1 = 1.0 - (cfg.beta1).powi(t as i32);
    let bc2 = 1.0 - (cfg.beta2).powi(t as i32);
    let eps = cfg.epsilon as f32;
    let lr = lr as f32;
    for i in 0..param.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
        v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1 as f32;
        let v_hat = v[i] / bc2 as f32;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
