//! Adam optimizer with bias correction.

use super::Tensor;
use crate::error::{Error, Result};

/// Optimizer state: one pair of moment buffers per parameter, in parameter
/// order. `step_count` advances exactly once per [`adam_step`].
pub struct AdamState {
    pub step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor], learning_rate: f64) -> AdamState {
        AdamState {
            step_count: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Paper-default configuration: constant learning rate 0.001.
    pub fn with_defaults(params: &[Tensor]) -> AdamState {
        AdamState::new(params, 0.001)
    }
}

/// One Adam update across `params`, reading each parameter's populated
/// gradient buffer. Gradients are left untouched; the caller zeroes them.
pub fn adam_step(params: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != state.first_moment.len() {
        return Err(Error::invalid(format!(
            "adam_step: {} params but state holds {}",
            params.len(),
            state.first_moment.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if state.first_moment[i].len() != p.numel() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "param {} has {} elements but moment buffer has {}",
                    i,
                    p.numel(),
                    state.first_moment[i].len()
                ),
            ));
        }
        if p.grad().is_none() {
            return Err(Error::invalid(format!(
                "adam_step: param {} ({:?}) has no gradient",
                i,
                p.shape()
            )));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    for (i, p) in params.iter().enumerate() {
        let grad_ref = p.grad();
        let grad = grad_ref.as_ref().unwrap();
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        let mut data = p.data_mut();
        for j in 0..grad.len() {
            let g = grad[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            data[j] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Clears the gradient buffer of every parameter.
pub fn zero_grad_all(params: &[Tensor]) {
    for p in params {
        p.zero_grad();
    }
}
