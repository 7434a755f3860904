//! The two towers: a convolutional image encoder and a fully connected
//! response encoder that map into a shared `d`-dimensional space.
//!
//! Images are `c×64×64` with values in `[0,1]`; responses are expected to be
//! z-scored per neuron with training-split statistics before they reach the
//! response encoder (see [`crate::dataio`]).

mod layers;
mod params;
mod resize;
mod spike;
mod visual;

pub use layers::{BatchNorm, Conv, Linear};
pub use params::{run_eval_chunked, ArchHyper, Binding, Forward, ParamEntry, ParamId, ParamKind, ParamStore};
pub use resize::{resize_bilinear, resize_image};
pub use spike::{SpikeEncoder, SpikeEncoderConfig, SPIKE_HIDDEN};
pub use visual::{
    ConvBlock, VisualEncoder, VisualEncoderConfig, CONV_KERNEL, CONV_PADDING, CONV_STRIDE, IMAGE_SIZE,
    VISUAL_CHANNELS,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rows per eval-mode chunk when embedding a whole split.
pub const EVAL_CHUNK: usize = 128;

/// Both towers of the alignment model and their parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct VnaParams<T> {
    pub visual: VisualEncoder,
    pub spike: SpikeEncoder,
    pub store: ParamStore<T>,
    pub hyper: ArchHyper,
}

/// Seeded initialisation of both towers for `c` image channels, `n` neurons
/// and latent size `d`.
pub fn init_params<T: Scalar>(seed: u64, c: usize, n: usize, d: usize) -> Result<VnaParams<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let visual = VisualEncoder::register(&mut store, "visual", VisualEncoderConfig::standard(c, d), &mut rng)?;
    let spike = SpikeEncoder::register(&mut store, "spike", SpikeEncoderConfig::standard(n, d), &mut rng)?;
    Ok(VnaParams {
        visual,
        spike,
        store,
        hyper: ArchHyper::default(),
    })
}

impl<T: Scalar> VnaParams<T> {
    /// Eval-mode image embeddings `[B, d]`.
    pub fn encode_images(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        run_eval_chunked(&self.store, self.hyper, images, EVAL_CHUNK, |cx, x| self.visual.forward(cx, x))
    }

    /// Eval-mode response embeddings `[B, d]`.
    pub fn encode_responses(&self, spikes: &Tensor<T>) -> Result<Tensor<T>> {
        run_eval_chunked(&self.store, self.hyper, spikes, EVAL_CHUNK, |cx, x| self.spike.forward(cx, x))
    }
}
