//! Adam with bias correction.

use super::TrainError;
use crate::model::Params;

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

/// Moment buffers (one per parameter tensor, same order) and step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &Params<f32>, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| vec![0.0; t.numel()])
                .collect()
        };
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One update:
///
/// ```text
/// m ← β1·m + (1−β1)·g        v ← β2·v + (1−β2)·g²
/// θ ← θ − lr · m̂ / (√v̂ + ε)  with m̂ = m/(1−β1^t), v̂ = v/(1−β2^t)
/// ```
///
/// Arithmetic is carried out in `f64`; moments and parameters are stored as `f32`.
pub fn adam_step(
    params: &mut Params<f32>,
    grads: &[Vec<f32>],
    state: &mut AdamState,
) -> Result<(), TrainError> {
    if grads.len() != params.len() {
        let name = params
            .names()
            .get(grads.len())
            .cloned()
            .unwrap_or_else(|| format!("#{}", grads.len()));
        return Err(TrainError::MissingGradient(name));
    }
    for ((name, t), g) in params.names().iter().zip(params.tensors()).zip(grads) {
        if g.len() != t.numel() {
            return Err(TrainError::MissingGradient(format!(
                "{name} (gradient has {} elements, parameter {})",
                g.len(),
                t.numel()
            )));
        }
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[i], &mut state.v[i], &grads[i]);
        for (j, p) in tensor.data_mut().iter_mut().enumerate() {
            let gj = g[j] as f64;
            let mj = beta1 * m[j] as f64 + (1.0 - beta1) * gj;
            let vj = beta2 * v[j] as f64 + (1.0 - beta2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let update = lr * (mj / bc1) / ((vj / bc2).sqrt() + eps);
            *p = (*p as f64 - update) as f32;
        }
    }
    Ok(())
}
