use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::net::NetworkParams;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment estimates per named parameter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: BTreeMap<String, Tensor4<T>>,
    pub v: BTreeMap<String, Tensor4<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }
}

/// One Adam update with bias-corrected moments:
/// `θ ← θ − lr · m̂ / (√v̂ + eps)`.
pub fn adam_step<T: Scalar>(
    params: &mut NetworkParams<T>,
    grads: &NetworkParams<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params
            .get(name)
            .ok_or_else(|| Error::Config(format!("gradient for unknown parameter {name}")))?;
        p.check_same_shape("adam_step", g)?;
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, g) in grads.iter() {
        let shape = g.shape();
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor4::zeros(shape));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor4::zeros(shape));
        let p = params.get_mut(name).expect("checked above");
        for (((theta, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let gi = gi.to_f64_lossy();
            let m_new = b1 * mi.to_f64_lossy() + (1.0 - b1) * gi;
            let v_new = b2 * vi.to_f64_lossy() + (1.0 - b2) * gi * gi;
            *mi = T::from_f64_lossy(m_new);
            *vi = T::from_f64_lossy(v_new);
            let m_hat = m_new / c1;
            let v_hat = v_new / c2;
            let updated = theta.to_f64_lossy() - lr * m_hat / (v_hat.sqrt() + state.eps);
            *theta = T::from_f64_lossy(updated);
        }
    }
    Ok(())
}
