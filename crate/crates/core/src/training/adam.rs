use serde::{Deserialize, Serialize};

use crate::encoder::ModelParams;

use super::{TrainConfig, TrainError};

/// First/second moment estimates, one pair per parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

/// Bias-corrected Adam on one flat slice. `step` is the 1-based step index.
/// Weight decay, when nonzero, is decoupled from the gradient.
pub fn adam_update_slice(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    hyper: &AdamHyper,
) {
    let c1 = 1.0 - hyper.beta1.powi(step as i32);
    let c2 = 1.0 - hyper.beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
        v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        let mut update = m_hat / (v_hat.sqrt() + hyper.epsilon);
        if hyper.weight_decay != 0.0 {
            update += hyper.weight_decay * param[i];
        }
        param[i] -= hyper.learning_rate * update;
    }
}

/// Learning rate at a 1-based step, with optional linear warmup.
pub fn scheduled_learning_rate(config: &TrainConfig, step: u64) -> f64 {
    if config.warmup_steps > 0 && step < config.warmup_steps as u64 {
        config.learning_rate * step as f64 / config.warmup_steps as f64
    } else {
        config.learning_rate
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|t| t.data.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// One Adam update of every parameter tensor.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    if !params.same_shape(grads)
        || !params.same_shape(&state.first_moment)
        || !params.same_shape(&state.second_moment)
    {
        return Err(TrainError::ShapeMismatch("parameters, gradients and moments must share shapes".into()));
    }
    state.step += 1;
    let hyper = AdamHyper {
        learning_rate: scheduled_learning_rate(config, state.step),
        beta1: config.adam_beta1,
        beta2: config.adam_beta2,
        epsilon: config.adam_epsilon,
        weight_decay: config.weight_decay,
    };
    let step = state.step;
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.first_moment.tensors_mut())
        .zip(state.second_moment.tensors_mut())
    {
        adam_update_slice(&mut p.data, &g.data, &mut m.data, &mut v.data, step, &hyper);
    }
    Ok(())
}
