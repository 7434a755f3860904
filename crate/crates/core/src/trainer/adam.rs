//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::encoders::ParamStore;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for every trainable entry of a store, in
/// [`ParamStore::trainable`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = store
            .trainable()
            .into_iter()
            .map(|id| Tensor::zeros(store.get(id).shape().to_vec()))
            .collect();
        AdamState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One Adam update of every trainable entry:
/// `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`,
/// `p ← p − lr·m̂/(√v̂ + ε)` with bias-corrected `m̂`, `v̂`.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, grads: &[Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    let ids = store.trainable();
    if grads.len() != ids.len() || state.m.len() != ids.len() {
        return Err(shape_err!(
            "{} gradients and {} moment slots for {} trainable tensors",
            grads.len(),
            state.m.len(),
            ids.len()
        ));
    }
    for (&id, g) in ids.iter().zip(grads) {
        if g.shape() != store.get(id).shape() {
            return Err(shape_err!("gradient {:?} for {} {:?}", g.shape(), store.name(id), store.get(id).shape()));
        }
        if !g.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for parameter {}", store.name(id))));
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
    let corr1 = T::of(1.0 - c.beta1.powi(t));
    let corr2 = T::of(1.0 - c.beta2.powi(t));
    let (lr, eps) = (T::of(c.learning_rate), T::of(c.epsilon));
    for (i, &id) in ids.iter().enumerate() {
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        let p = store.get_mut(id).data_mut();
        for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grads[i].data()) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::ParamKind;

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", ParamKind::Weight, Tensor::from_f64(vec![values.len()], values).unwrap());
        s.add("running", ParamKind::Buffer, Tensor::zeros(vec![2]));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store(&[0.5, -1.0]);
        let mut st = AdamState::new(AdamConfig::with_lr(0.01), &s);
        adam_step(&mut s, &[Tensor::zeros(vec![2])], &mut st).unwrap();
        assert_eq!(s.entries()[0].tensor.data(), &[0.5, -1.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(&[0.0, 2.0]);
        let mut st = AdamState::new(AdamConfig::with_lr(0.01), &s);
        adam_step(&mut s, &[Tensor::ones(vec![2])], &mut st).unwrap();
        let want = 0.01 / (1.0 + 1e-8);
        assert!((s.entries()[0].tensor.data()[0] + want).abs() < 1e-15);
        assert!((s.entries()[0].tensor.data()[1] - (2.0 - want)).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_are_bounded_and_monotone() {
        let mut s = store(&[1.0]);
        let mut st = AdamState::new(AdamConfig::with_lr(0.01), &s);
        let mut prev = 1.0;
        for _ in 0..5 {
            adam_step(&mut s, &[Tensor::full(vec![1], 0.3)], &mut st).unwrap();
            let now = s.entries()[0].tensor.data()[0];
            let delta = now - prev;
            assert!(delta < 0.0 && delta.abs() <= 0.01 * (1.0 + 1e-9));
            prev = now;
        }
    }

    #[test]
    fn quadratic_step_moves_toward_minimum() {
        for (x0, a) in [(3.0, 1.0), (-2.0, 0.5), (0.02, 0.0), (-0.5, 7.0)] {
            let mut s = store(&[x0]);
            let mut st = AdamState::new(AdamConfig::with_lr(0.01), &s);
            adam_step(&mut s, &[Tensor::full(vec![1], x0 - a)], &mut st).unwrap();
            let x1 = s.entries()[0].tensor.data()[0];
            assert!((x1 - a).abs() < (x0 - a).abs());
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store(&[1.0]);
        let mut st = AdamState::new(AdamConfig::with_lr(0.01), &s);
        let err = adam_step(&mut s, &[Tensor::full(vec![1], f64::NAN)], &mut st).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("parameter w")));
        assert_eq!(st.step, 0);
    }
}
