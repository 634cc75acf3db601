//! Decoupled-weight-decay adaptive-moment optimizer.
//!
//! Standard update with bias correction:
//!
//! ```text
//! theta *= 1 - lr * weight_decay            (decoupled decay)
//! m = beta1 * m + (1 - beta1) * g
//! v = beta2 * v + (1 - beta2) * g^2
//! theta -= lr * (m / (1 - beta1^t)) / (sqrt(v / (1 - beta2^t)) + eps)
//! ```

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
    pub weight_decay: f64,
}

impl Default for OptimHyper {
    fn default() -> Self {
        OptimHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_opt: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Moment estimates congruent with a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub hyper: OptimHyper,
}

impl OptimizerState {
    pub fn new(n_params: usize, hyper: OptimHyper) -> Self {
        OptimizerState {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
            hyper,
        }
    }
}

/// One optimizer step in place; `lr_scale` carries warmup (1.0 otherwise).
pub fn optimizer_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    lr_scale: f64,
) -> Result<()> {
    if params.len() != grads.len()
        || params.len() != state.first_moment.len()
        || params.len() != state.second_moment.len()
    {
        return Err(Error::Contract(format!(
            "optimizer shapes disagree: params {}, grads {}, moments {}/{}",
            params.len(),
            grads.len(),
            state.first_moment.len(),
            state.second_moment.len()
        )));
    }
    state.step_count += 1;
    let h = state.hyper;
    let lr = h.lr * lr_scale;
    let bc1 = 1.0 - h.beta1.powi(state.step_count as i32);
    let bc2 = 1.0 - h.beta2.powi(state.step_count as i32);
    for i in 0..params.len() {
        params[i] *= 1.0 - lr * h.weight_decay;
        let g = grads[i];
        state.first_moment[i] = h.beta1 * state.first_moment[i] + (1.0 - h.beta1) * g;
        state.second_moment[i] = h.beta2 * state.second_moment[i] + (1.0 - h.beta2) * g * g;
        let m_hat = state.first_moment[i] / bc1;
        let v_hat = state.second_moment[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + h.eps_opt);
    }
    Ok(())
}
