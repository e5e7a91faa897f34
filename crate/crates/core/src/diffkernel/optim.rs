use serde::{Deserialize, Serialize};

use super::{KernelError, ParameterSet};
use crate::scalar::Scalar;

/// AdamW hyperparameters. Learning rate is constant (no schedule).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates and step counter for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub first_moment: ParameterSet<T>,
    pub second_moment: ParameterSet<T>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParameterSet<T>) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub state: OptimizerState<T>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ParameterSet<T>) -> Self {
        Self {
            config,
            state: OptimizerState::new(params),
        }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ParameterSet<T>, grads: &ParameterSet<T>) -> Result<(), KernelError> {
        adamw_step(params, grads, &mut self.state, &self.config)
    }
}

/// One AdamW update: the step counter is incremented before bias
/// correction; weight decay scales parameters by `1 - lr * wd` independent
/// of the gradient.
pub fn adamw_step<T: Scalar>(
    params: &mut ParameterSet<T>,
    grads: &ParameterSet<T>,
    state: &mut OptimizerState<T>,
    cfg: &AdamWConfig,
) -> Result<(), KernelError> {
    for (name, p) in params.iter() {
        let g = grads.get(name)?;
        let m = state.first_moment.get(name)?;
        if g.shape() != p.shape() || m.shape() != p.shape() {
            return Err(KernelError::ShapeMismatch {
                op: "adamw_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let lr = T::of(cfg.learning_rate);
    let eps = T::of(cfg.epsilon);
    let decay = T::one() - lr * T::of(cfg.weight_decay);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?.data();
        let m = state.first_moment.get_mut(name)?.data_mut();
        for (mi, &gi) in m.iter_mut().zip(g) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
        }
        let v = state.second_moment.get_mut(name)?.data_mut();
        for (vi, &gi) in v.iter_mut().zip(g) {
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
        }
        let m = state.first_moment.get(name)?.data();
        let v = state.second_moment.get(name)?.data();
        for ((pi, &mi), &vi) in p.data_mut().iter_mut().zip(m).zip(v) {
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            *pi = *pi * decay - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
