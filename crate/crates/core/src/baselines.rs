//! Regression baselines. Direct encoding predicts the (z-scored) response
//! from the image; direct decoding reconstructs the image from the
//! response. Both are trained with mean squared error and rank candidates
//! by negated Euclidean distance in their output space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::encoders::{
    run_eval_chunked, ArchHyper, BatchNorm, Conv, Forward, ParamStore, SpikeEncoder, SpikeEncoderConfig,
    VisualEncoder, VisualEncoderConfig, CONV_KERNEL, CONV_PADDING, CONV_STRIDE, EVAL_CHUNK, IMAGE_SIZE,
    VISUAL_CHANNELS,
};
use crate::error::{invalid, shape_err, Result};
use crate::evaluation::{Method, TaskMode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Image tower with its projection retargeted to the neuron count.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectEncoderParams<T> {
    pub visual: VisualEncoder,
    pub store: ParamStore<T>,
    pub hyper: ArchHyper,
}

impl<T: Scalar> DirectEncoderParams<T> {
    pub fn init(seed: u64, channels: usize, neurons: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let visual = VisualEncoder::register(
            &mut store,
            "encode",
            VisualEncoderConfig::standard(channels, neurons),
            &mut rng,
        )?;
        Ok(DirectEncoderParams {
            visual,
            store,
            hyper: ArchHyper::default(),
        })
    }

    pub fn forward(&self, cx: &mut Forward<'_, T>, images: Var) -> Result<Var> {
        self.visual.forward(cx, images)
    }

    /// Eval-mode predicted responses `[B, n]`.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        run_eval_chunked(&self.store, self.hyper, images, EVAL_CHUNK, |cx, x| self.forward(cx, x))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectDecoderConfig {
    pub neurons: usize,
    pub out_channels: usize,
    /// Width of the dense layer feeding the deconvolution stack.
    pub bottleneck: usize,
    /// Channel count and side of the seed feature map, `bottleneck = ch·side²`.
    pub seed_channels: usize,
    pub seed_side: usize,
    /// Output channels of the transposed-conv blocks; the last equals `out_channels`.
    pub channels: Vec<usize>,
}

impl DirectDecoderConfig {
    /// Mirror of the image tower: 1024 = 256·2·2 up to `c×64×64`.
    pub fn standard(neurons: usize, out_channels: usize) -> Self {
        let mut channels: Vec<usize> = VISUAL_CHANNELS[..4].iter().rev().copied().collect();
        channels.push(out_channels);
        DirectDecoderConfig {
            neurons,
            out_channels,
            bottleneck: 1024,
            seed_channels: VISUAL_CHANNELS[4],
            seed_side: 2,
            channels,
        }
    }

    pub fn output_side(&self) -> usize {
        self.seed_side << self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.neurons == 0 || self.out_channels == 0 || self.channels.is_empty() {
            return Err(invalid!("direct decoder dimensions must be positive: {self:?}"));
        }
        if self.bottleneck != self.seed_channels * self.seed_side * self.seed_side {
            return Err(invalid!("bottleneck {} does not match seed map {:?}", self.bottleneck, self));
        }
        if self.channels.last() != Some(&self.out_channels) {
            return Err(invalid!("last decoder block must output {} channels", self.out_channels));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeconvBlock {
    pub conv: Conv,
    /// Present on every block but the last, which feeds the sigmoid.
    pub bn: Option<BatchNorm>,
}

/// Response trunk (n→512→1024) followed by a transposed-conv stack that
/// ends in a sigmoid, so reconstructions lie in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectDecoderParams<T> {
    pub config: DirectDecoderConfig,
    pub trunk: SpikeEncoder,
    pub blocks: Vec<DeconvBlock>,
    pub store: ParamStore<T>,
    pub hyper: ArchHyper,
}

impl<T: Scalar> DirectDecoderParams<T> {
    pub fn init(seed: u64, channels: usize, neurons: usize) -> Result<Self> {
        Self::with_config(seed, DirectDecoderConfig::standard(neurons, channels))
    }

    pub fn with_config(seed: u64, config: DirectDecoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let trunk = SpikeEncoder::register(
            &mut store,
            "decode.trunk",
            SpikeEncoderConfig::standard(config.neurons, config.bottleneck),
            &mut rng,
        )?;
        let mut in_c = config.seed_channels;
        let mut blocks = Vec::with_capacity(config.channels.len());
        for (i, &out_c) in config.channels.iter().enumerate() {
            let name = format!("decode.block{i}");
            let conv = Conv::register(
                &mut store,
                &format!("{name}.deconv"),
                in_c,
                out_c,
                CONV_KERNEL,
                CONV_STRIDE,
                CONV_PADDING,
                true,
                &mut rng,
            );
            let last = i + 1 == config.channels.len();
            let bn = (!last).then(|| BatchNorm::register(&mut store, &format!("{name}.bn"), out_c));
            blocks.push(DeconvBlock { conv, bn });
            in_c = out_c;
        }
        Ok(DirectDecoderParams {
            config,
            trunk,
            blocks,
            store,
            hyper: ArchHyper::default(),
        })
    }

    pub fn forward(&self, cx: &mut Forward<'_, T>, spikes: Var) -> Result<Var> {
        let cfg = &self.config;
        let batch = cx.graph.shape(spikes).first().copied().unwrap_or(0);
        let slope = cx.leaky_slope();
        let h = self.trunk.forward(cx, spikes)?;
        let h = cx.graph.leaky_relu(h, slope);
        let mut x = cx.graph.reshape(h, vec![batch, cfg.seed_channels, cfg.seed_side, cfg.seed_side])?;
        for block in &self.blocks {
            x = block.conv.forward(cx, x)?;
            x = match &block.bn {
                Some(bn) => {
                    let y = bn.forward(cx, x)?;
                    cx.graph.leaky_relu(y, slope)
                }
                None => cx.graph.sigmoid(x),
            };
        }
        Ok(x)
    }

    /// Eval-mode reconstructions `[B, c, 64, 64]`.
    pub fn predict(&self, spikes: &Tensor<T>) -> Result<Tensor<T>> {
        run_eval_chunked(&self.store, self.hyper, spikes, EVAL_CHUNK, |cx, x| self.forward(cx, x))
    }
}

/// Differentiable mean of squared differences.
pub fn mse_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        return Err(shape_err!(
            "mse between {:?} and {:?}",
            g.shape(pred),
            g.shape(target)
        ));
    }
    let diff = g.sub(pred, target)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean(sq))
}

/// Value-level [`mse_loss`].
pub fn mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(shape_err!("mse between {:?} and {:?}", pred.shape(), target.shape()));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t).as_f64().powi(2))
        .sum();
    Ok(T::of(sum / pred.numel() as f64))
}

pub fn euclidean_distance<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(shape_err!("distance between lengths {} and {}", a.len(), b.len()));
    }
    let sum: f64 = a.iter().zip(b).map(|(&x, &y)| (x - y).as_f64().powi(2)).sum();
    Ok(T::of(sum.sqrt()))
}

/// Scores for one retrieval query under a regression baseline, higher is
/// better. Vectors live in the method's comparison space:
///
/// | method        | encoding: query / candidates | decoding: query / candidates |
/// |---------------|------------------------------|------------------------------|
/// | direct-encode | `f(M)` / `v_j`               | `v` / `f(M_i)`               |
/// | direct-decode | `M` / `g(v_j)`               | `g(v)` / `M_i`               |
///
/// In every case the score is `-‖query − candidate‖₂`, so the highest
/// score is the smallest distance.
pub fn baseline_scores<T: Scalar>(method: Method, mode: TaskMode, query: &[T], candidates: &[&[T]]) -> Result<Vec<T>> {
    match (method, mode) {
        (Method::DirectEncode | Method::DirectDecode, TaskMode::Encoding | TaskMode::Decoding) => {}
        _ => return Err(invalid!("{method} has no distance ranking rule for {mode}")),
    }
    if candidates.is_empty() {
        return Err(invalid!("baseline_scores: empty candidate list"));
    }
    candidates.iter().map(|c| euclidean_distance(query, c).map(|d| -d)).collect()
}

/// Side of the decoder output; always the image-tower input size.
pub const DECODED_SIDE: usize = IMAGE_SIZE;
