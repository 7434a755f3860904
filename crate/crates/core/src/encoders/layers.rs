//! Building blocks shared by the encoders and the baseline networks.

use rand::Rng;

use super::params::{Forward, ParamId, ParamKind, ParamStore};
use crate::autodiff::{Mode, RunningStats, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Uniform in `±sqrt(1/fan_in)`.
fn uniform_init<T: Scalar>(rng: &mut impl Rng, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
    let bound = (1.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..=bound)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = uniform_init(rng, vec![out_features, in_features], in_features);
        Linear {
            weight: store.add(format!("{name}.weight"), ParamKind::Weight, w),
            bias: store.add(format!("{name}.bias"), ParamKind::Weight, Tensor::zeros(vec![out_features])),
            in_features,
            out_features,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (cx.var(self.weight), cx.var(self.bias));
        cx.graph.linear(x, w, b)
    }
}

/// Square-kernel convolution, optionally transposed.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub transposed: bool,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        transposed: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let (shape, fan_in) = if transposed {
            (vec![in_channels, out_channels, kernel, kernel], out_channels * kernel * kernel)
        } else {
            (vec![out_channels, in_channels, kernel, kernel], in_channels * kernel * kernel)
        };
        let w = uniform_init(rng, shape, fan_in);
        Conv {
            weight: store.add(format!("{name}.weight"), ParamKind::Weight, w),
            bias: store.add(format!("{name}.bias"), ParamKind::Weight, Tensor::zeros(vec![out_channels])),
            transposed,
            stride,
            padding,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (cx.var(self.weight), cx.var(self.bias));
        if self.transposed {
            cx.graph.conv_transpose2d(x, w, b, self.stride, self.padding)
        } else {
            cx.graph.conv2d(x, w, b, self.stride, self.padding)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), ParamKind::Weight, Tensor::ones(vec![channels])),
            beta: store.add(format!("{name}.beta"), ParamKind::Weight, Tensor::zeros(vec![channels])),
            running_mean: store.add(format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros(vec![channels])),
            running_var: store.add(format!("{name}.running_var"), ParamKind::Buffer, Tensor::ones(vec![channels])),
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (cx.var(self.gamma), cx.var(self.beta));
        let mut running = RunningStats {
            mean: cx.store().get(self.running_mean).data().to_vec(),
            var: cx.store().get(self.running_var).data().to_vec(),
        };
        let (config, mode) = (cx.hyper().batch_norm, cx.mode());
        let y = cx.graph.batch_norm(x, gamma, beta, &mut running, config, mode)?;
        if mode == Mode::Train {
            let c = running.mean.len();
            cx.record_update(self.running_mean, Tensor::new(vec![c], running.mean)?);
            cx.record_update(self.running_var, Tensor::new(vec![c], running.var)?);
        }
        Ok(y)
    }
}
