use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam moments plus an exponentially decayed learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    #[serde(skip)]
    pub(crate) m: Vec<f64>,
    #[serde(skip)]
    pub(crate) v: Vec<f64>,
    pub step: u64,
    pub base_lr: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub decay: f64,
    pub epoch: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(num_params: usize, base_lr: f64, decay: f64) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
            base_lr,
            decay,
            epoch: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        self.base_lr * self.decay.powi(self.epoch as i32)
    }

    pub fn end_epoch(&mut self) {
        self.epoch += 1;
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn num_params(&self) -> usize {
        self.m.len()
    }
}

/// One bias-corrected Adam update minimizing the loss whose gradient is
/// `grads`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidInput(format!(
            "shape mismatch: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::TrainingDiverged(format!(
            "gradient {i} is {}",
            grads[i]
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let lr = state.lr();
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}
