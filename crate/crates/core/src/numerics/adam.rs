use crate::error::{Error, Result};

use super::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamSlot<T: Real = f32> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step: u64,
}

impl<T: Real> AdamSlot<T> {
    pub fn zeros_like(param: &Tensor<T>) -> Self {
        Self { m: Tensor::zeros(param.shape().to_vec()), v: Tensor::zeros(param.shape().to_vec()), step: 0 }
    }
}

/// Bias-corrected Adam over an ordered set of parameter tensors.
///
/// Each slot carries its own step counter so that parameters updated by more
/// than one objective keep a consistent bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub config: AdamConfig,
    pub slots: Vec<AdamSlot<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        Self { config, slots: params.into_iter().map(AdamSlot::zeros_like).collect() }
    }

    /// Applies one update to `param` (slot `index`) from `grad`.
    pub fn update(&mut self, index: usize, param: &mut Tensor<T>, grad: &Tensor<T>) -> Result<()> {
        let slot = self
            .slots
            .get_mut(index)
            .ok_or_else(|| Error::contract("adam_update", format!("no moment slot {index}")))?;
        if param.shape() != grad.shape() || param.shape() != slot.m.shape() {
            return Err(Error::contract(
                "adam_update",
                format!("param {:?}, grad {:?}, moments {:?}", param.shape(), grad.shape(), slot.m.shape()),
            ));
        }
        slot.step += 1;
        let c = self.config;
        let t = slot.step as i32;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::from_f64(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(t));
        let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));
        let p = param.data_mut();
        let m = slot.m.data_mut();
        let v = slot.v.data_mut();
        for (((p, &g), m), v) in p.iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
