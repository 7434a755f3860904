//! Fully connected response tower `g: R^n → R^d`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Linear};
use super::params::{Forward, ParamStore};
use crate::autodiff::Var;
use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;

pub const SPIKE_HIDDEN: usize = 512;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeEncoderConfig {
    pub neurons: usize,
    pub hidden: usize,
    pub out_dim: usize,
}

impl SpikeEncoderConfig {
    pub fn standard(neurons: usize, out_dim: usize) -> Self {
        SpikeEncoderConfig {
            neurons,
            hidden: SPIKE_HIDDEN,
            out_dim,
        }
    }
}

/// linear(n→512) → batch-norm → leaky-ReLU → linear(512→d).
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeEncoder {
    pub config: SpikeEncoderConfig,
    pub hidden: Linear,
    pub bn: BatchNorm,
    pub proj: Linear,
}

impl SpikeEncoder {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: SpikeEncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if config.neurons == 0 || config.hidden == 0 || config.out_dim == 0 {
            return Err(invalid!("spike encoder dimensions must be positive: {config:?}"));
        }
        let hidden = Linear::register(store, &format!("{prefix}.hidden"), config.neurons, config.hidden, rng);
        let bn = BatchNorm::register(store, &format!("{prefix}.bn"), config.hidden);
        let proj = Linear::register(store, &format!("{prefix}.proj"), config.hidden, config.out_dim, rng);
        Ok(SpikeEncoder {
            config,
            hidden,
            bn,
            proj,
        })
    }

    /// Hidden representation after the nonlinearity, `[B, hidden]`.
    pub fn trunk<T: Scalar>(&self, cx: &mut Forward<'_, T>, spikes: Var) -> Result<Var> {
        let shape = cx.graph.shape(spikes);
        if shape.len() != 2 || shape[1] != self.config.neurons {
            return Err(shape_err!(
                "spike encoder expects [B,{}], got {:?}",
                self.config.neurons,
                shape
            ));
        }
        let h = self.hidden.forward(cx, spikes)?;
        let h = self.bn.forward(cx, h)?;
        let slope = cx.leaky_slope();
        Ok(cx.graph.leaky_relu(h, slope))
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Forward<'_, T>, spikes: Var) -> Result<Var> {
        let h = self.trunk(cx, spikes)?;
        self.proj.forward(cx, h)
    }
}
