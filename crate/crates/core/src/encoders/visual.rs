//! Convolutional image tower `f: R^{c×64×64} → R^d`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Conv, Linear};
use super::params::{Forward, ParamStore};
use crate::autodiff::Var;
use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;

pub const IMAGE_SIZE: usize = 64;
pub const CONV_KERNEL: usize = 4;
pub const CONV_STRIDE: usize = 2;
pub const CONV_PADDING: usize = 1;
pub const VISUAL_CHANNELS: [usize; 5] = [16, 32, 64, 128, 256];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualEncoderConfig {
    pub in_channels: usize,
    pub image_size: usize,
    /// Output channels of each conv block; every block halves the spatial size.
    pub channels: Vec<usize>,
    pub out_dim: usize,
}

impl VisualEncoderConfig {
    /// Five blocks (16..256 channels) on 64×64 input: 256·2·2 = 1024 features.
    pub fn standard(in_channels: usize, out_dim: usize) -> Self {
        VisualEncoderConfig {
            in_channels,
            image_size: IMAGE_SIZE,
            channels: VISUAL_CHANNELS.to_vec(),
            out_dim,
        }
    }

    /// Downsized variant (8×8 input, three blocks) for gradient checks.
    pub fn probe(in_channels: usize, out_dim: usize) -> Self {
        VisualEncoderConfig {
            in_channels,
            image_size: 8,
            channels: VISUAL_CHANNELS[..3].to_vec(),
            out_dim,
        }
    }

    pub fn final_spatial(&self) -> usize {
        self.image_size >> self.channels.len()
    }

    pub fn flattened_dim(&self) -> usize {
        let s = self.final_spatial();
        self.channels.last().copied().unwrap_or(self.in_channels) * s * s
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_dim == 0 || self.channels.is_empty() {
            return Err(invalid!("visual encoder needs channels, blocks and an output size"));
        }
        if self.final_spatial() == 0 || !self.image_size.is_multiple_of(1 << self.channels.len()) {
            return Err(invalid!(
                "image size {} cannot be halved {} times",
                self.image_size,
                self.channels.len()
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv,
    pub bn: BatchNorm,
}

/// Conv → batch-norm → leaky-ReLU blocks, flatten, linear projection.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualEncoder {
    pub config: VisualEncoderConfig,
    pub blocks: Vec<ConvBlock>,
    pub proj: Linear,
}

impl VisualEncoder {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: VisualEncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let mut in_c = config.in_channels;
        let mut blocks = Vec::with_capacity(config.channels.len());
        for (i, &out_c) in config.channels.iter().enumerate() {
            let name = format!("{prefix}.block{i}");
            let conv = Conv::register(
                store,
                &format!("{name}.conv"),
                in_c,
                out_c,
                CONV_KERNEL,
                CONV_STRIDE,
                CONV_PADDING,
                false,
                rng,
            );
            let bn = BatchNorm::register(store, &format!("{name}.bn"), out_c);
            blocks.push(ConvBlock { conv, bn });
            in_c = out_c;
        }
        let proj = Linear::register(store, &format!("{prefix}.proj"), config.flattened_dim(), config.out_dim, rng);
        Ok(VisualEncoder { config, blocks, proj })
    }

    /// Output of every conv block followed by the projected embedding.
    pub fn forward_trace<T: Scalar>(&self, cx: &mut Forward<'_, T>, images: Var) -> Result<Vec<Var>> {
        let cfg = &self.config;
        let shape = cx.graph.shape(images);
        if shape.len() != 4 || shape[1] != cfg.in_channels || shape[2] != cfg.image_size || shape[3] != cfg.image_size {
            return Err(shape_err!(
                "visual encoder expects [B,{},{},{}], got {:?}",
                cfg.in_channels,
                cfg.image_size,
                cfg.image_size,
                shape
            ));
        }
        let slope = cx.leaky_slope();
        let mut trace = Vec::with_capacity(self.blocks.len() + 1);
        let mut x = images;
        for block in &self.blocks {
            x = block.conv.forward(cx, x)?;
            x = block.bn.forward(cx, x)?;
            x = cx.graph.leaky_relu(x, slope);
            trace.push(x);
        }
        let flat = cx.graph.flatten(x)?;
        trace.push(self.proj.forward(cx, flat)?);
        Ok(trace)
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Forward<'_, T>, images: Var) -> Result<Var> {
        Ok(*self.forward_trace(cx, images)?.last().expect("projection output"))
    }
}
