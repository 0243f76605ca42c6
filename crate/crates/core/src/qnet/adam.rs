//! Bias-corrected Adam.

use alloc::format;

use super::ParamSet;
use crate::math::Real;
use crate::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    /// Step size α.
    pub learning_rate: f64,
    /// First-moment decay β1.
    pub beta1: f64,
    /// Second-moment decay β2.
    pub beta2: f64,
    /// Denominator offset ε.
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 0.01,
        }
    }
}

impl AdamConfig {
    /// Checks ranges of every hyperparameter.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::invalid("betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Moment estimates and step count, shaped like the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    /// First moments.
    pub m: ParamSet<T>,
    /// Second moments.
    pub v: ParamSet<T>,
    /// Updates applied so far.
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    /// Zero moments matching `params`.
    pub fn new(params: &ParamSet<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Applies one Adam update to `params` in place.
pub fn adam_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    state: &mut AdamState<T>,
    config: &AdamConfig,
) -> Result<()> {
    for (i, ((p, g), (m, v))) in params
        .slices()
        .iter()
        .zip(grads.slices())
        .zip(state.m.slices().iter().zip(state.v.slices()))
        .enumerate()
    {
        if p.len() != g.len() || p.len() != m.len() || p.len() != v.len() {
            return Err(Error::invalid(format!(
                "shape mismatch in {}: {} params, {} grads",
                ParamSet::<T>::NAMES[i],
                p.len(),
                g.len()
            )));
        }
    }
    state.step += 1;
    let step = state.step;
    for ((p, g), (m, v)) in params
        .slices_mut()
        .into_iter()
        .zip(grads.slices())
        .zip(state.m.slices_mut().into_iter().zip(state.v.slices_mut()))
    {
        update_slice(p, g, m, v, step, config);
    }
    Ok(())
}

pub(crate) fn update_slice<T: Real>(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], step: u64, cfg: &AdamConfig) {
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one_b1 = T::from_f64(1.0 - cfg.beta1);
    let one_b2 = T::from_f64(1.0 - cfg.beta2);
    let t = step.min(i32::MAX as u64) as i32;
    let c1 = T::from_f64(1.0 - libm::pow(cfg.beta1, t as f64));
    let c2 = T::from_f64(1.0 - libm::pow(cfg.beta2, t as f64));
    let lr = T::from_f64(cfg.learning_rate);
    let eps = T::from_f64(cfg.epsilon);
    for i in 0..p.len() {
        m[i] = b1 * m[i] + one_b1 * g[i];
        v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
