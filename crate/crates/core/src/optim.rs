//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One Adam update of `param` in place; increments `state.step`.
pub fn adam_step(param: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grad.len() != param.len() || state.m.len() != param.len() || state.v.len() != param.len() {
        return Err(Error::contract(format!(
            "adam: param {} / grad {} / state {},{} lengths differ",
            param.len(),
            grad.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        param[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over every tensor of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let states = store.iter().map(|(_, t)| AdamState::zeros(t.numel())).collect();
        Self { cfg, states }
    }

    /// Applies the accumulated gradients. Tensors without a gradient buffer
    /// are treated as having zero gradient. Does not zero the gradients.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let tensors = store.tensors_mut();
        if tensors.len() != self.states.len() {
            return Err(Error::contract(
                "adam: parameter store changed after optimizer creation",
            ));
        }
        for (t, state) in tensors.iter_mut().zip(&mut self.states) {
            let grad = match t.grad() {
                Some(g) => g.to_vec(),
                None => vec![0.0; t.numel()],
            };
            adam_step(t.data_mut(), &grad, state, &self.cfg)?;
        }
        Ok(())
    }
}
