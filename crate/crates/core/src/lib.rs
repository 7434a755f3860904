//! Contrastive alignment of images and neural firing-rate vectors.
//!
//! The crate contains a small reverse-mode tensor engine ([`autodiff`]), the
//! two encoder towers ([`encoders`]), the symmetric contrastive objective
//! ([`alignment`]), direct encoding/decoding regression baselines
//! ([`baselines`]), discriminative retrieval tasks with AUC scoring
//! ([`evaluation`]), a synthetic stimulus/response generator with a known
//! forward model ([`synthdata`]), the on-disk dataset container ([`dataio`])
//! and the Adam training loop with checkpoints ([`trainer`]).
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`).

pub mod alignment;
pub mod autodiff;
pub mod baselines;
pub mod dataio;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod scalar;
pub mod seed;
pub mod synthdata;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Graph, Mode, Var};
pub use error::{Error, Result};
pub use evaluation::{Method, TaskMode};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
