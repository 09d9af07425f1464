use super::{ModelParams, TrainConfig};
use crate::error::{Error, Result};

/// First and second moment estimates for every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.trainable().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of the trainable tensors:
/// `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    let shapes_match = params.same_shape(grads)
        && state.m.len() == params.n_trainable_tensors()
        && state.v.len() == state.m.len()
        && state
            .m
            .iter()
            .zip(&state.v)
            .zip(params.trainable())
            .all(|((m, v), p)| m.len() == p.len() && v.len() == p.len());
    if !shapes_match {
        return Err(Error::shape("adam state, gradients and parameters disagree in shape"));
    }
    state.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let lr = cfg.learning_rate;
    let eps = cfg.adam_epsilon;
    for (((p, g), m), v) in params
        .trainable_mut()
        .into_iter()
        .zip(grads.trainable())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
