use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::models::{is_buffer, NetworkParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
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

/// First and second moments for every trainable tensor of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    m: NetworkParams<T>,
    v: NetworkParams<T>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &NetworkParams<T>, config: AdamConfig) -> Self {
        let zeros = || {
            NetworkParams::from_entries(
                params
                    .iter()
                    .filter(|(n, _)| !is_buffer(n))
                    .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape().to_vec())))
                    .collect(),
            )
            .expect("names are unique")
        };
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every trainable tensor in `params`.
///
/// `grads` must hold exactly one gradient per trainable tensor, with the
/// same shape.
pub fn adam_step<T: Real>(params: &mut NetworkParams<T>, grads: &NetworkParams<T>, state: &mut AdamState<T>) -> Result<()> {
    let trainable = params.trainable_names().count();
    for (name, _) in grads.iter() {
        if params.get(name).is_none() || is_buffer(name) {
            return Err(Error::config(format!("gradient for unknown parameter `{name}`")));
        }
    }
    for name in params.trainable_names() {
        let g = grads.get(name).ok_or_else(|| Error::MissingGradient(name.to_string()))?;
        let p = params.get(name).expect("listed name");
        if g.shape() != p.shape() {
            return Err(Error::shape(format!(
                "gradient for `{name}` has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    debug_assert_eq!(trainable, grads.len());

    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = T::of_f64(1.0 - c.beta1.powi(t));
    let bc2 = T::of_f64(1.0 - c.beta2.powi(t));
    let (b1, b2) = (T::of_f64(c.beta1), T::of_f64(c.beta2));
    let (lr, eps) = (T::of_f64(c.lr), T::of_f64(c.eps));
    let one = T::one();
    for (name, p) in params.iter_mut() {
        if is_buffer(name) {
            continue;
        }
        let g = grads.get(name).expect("checked above").data();
        let m = state.m.get_mut(name).expect("moment per parameter").data_mut();
        let v = state.v.get_mut(name).expect("moment per parameter").data_mut();
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
