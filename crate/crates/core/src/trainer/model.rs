//! The trainable model of each method behind one interface.

use serde::{Deserialize, Serialize};

use crate::alignment::{contrastive_loss, similarity_matrix, ContrastiveConfig};
use crate::autodiff::{Graph, Mode, Var};
use crate::baselines::{mse_loss, DirectDecoderParams, DirectEncoderParams};
use crate::encoders::{init_params, ArchHyper, Binding, Forward, ParamStore, VnaParams};
use crate::error::{invalid, Result};
use crate::evaluation::{Method, Similarity};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Everything needed to rebuild a model's architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub method: Method,
    pub channels: usize,
    pub neurons: usize,
    /// Latent dimension; only the alignment model has one.
    pub d: usize,
    pub center_images: bool,
    pub temperature: Option<f64>,
    pub hyper: ArchHyper,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Network<T> {
    Vna(VnaParams<T>),
    DirectEncode(DirectEncoderParams<T>),
    DirectDecode(DirectDecoderParams<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub spec: ModelSpec,
    pub network: Network<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let network = match spec.method {
            Method::Vna => {
                let mut p = init_params(seed, spec.channels, spec.neurons, spec.d)?;
                p.hyper = spec.hyper;
                Network::Vna(p)
            }
            Method::DirectEncode => {
                let mut p = DirectEncoderParams::init(seed, spec.channels, spec.neurons)?;
                p.hyper = spec.hyper;
                Network::DirectEncode(p)
            }
            Method::DirectDecode => {
                let mut p = DirectDecoderParams::init(seed, spec.channels, spec.neurons)?;
                p.hyper = spec.hyper;
                Network::DirectDecode(p)
            }
        };
        Ok(ModelParams { spec, network })
    }

    pub fn method(&self) -> Method {
        self.spec.method
    }

    pub fn store(&self) -> &ParamStore<T> {
        match &self.network {
            Network::Vna(p) => &p.store,
            Network::DirectEncode(p) => &p.store,
            Network::DirectDecode(p) => &p.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        match &mut self.network {
            Network::Vna(p) => &mut p.store,
            Network::DirectEncode(p) => &mut p.store,
            Network::DirectDecode(p) => &mut p.store,
        }
    }

    /// Images as the image tower sees them.
    fn encoder_input(&self, images: &Tensor<T>) -> Tensor<T> {
        if self.spec.center_images {
            images.map(|v| v - T::of(0.5))
        } else {
            images.clone()
        }
    }

    /// Train-mode loss of one batch. `images` are `[B,c,64,64]` in `[0,1]`,
    /// `responses` are z-scored `[B,n]`. Returns the graph, the scalar loss
    /// node and the parameter binding for gradients and running statistics.
    pub fn batch_loss(&self, images: &Tensor<T>, responses: &Tensor<T>) -> Result<(Graph<T>, Var, Binding<T>)> {
        let mut graph = Graph::new();
        let mut cx = Forward::new(&mut graph, self.store(), Mode::Train, self.spec.hyper, true);
        let loss = match &self.network {
            Network::Vna(p) => {
                let x = cx.graph.constant(self.encoder_input(images));
                let y = cx.graph.constant(responses.clone());
                let a = p.visual.forward(&mut cx, x)?;
                let b = p.spike.forward(&mut cx, y)?;
                let w = similarity_matrix(cx.graph, a, b)?;
                let config = ContrastiveConfig {
                    temperature: self.spec.temperature,
                };
                contrastive_loss(cx.graph, w, config)?
            }
            Network::DirectEncode(p) => {
                let x = cx.graph.constant(self.encoder_input(images));
                let target = cx.graph.constant(responses.clone());
                let pred = p.forward(&mut cx, x)?;
                mse_loss(cx.graph, pred, target)?
            }
            Network::DirectDecode(p) => {
                let y = cx.graph.constant(responses.clone());
                let target = cx.graph.constant(images.clone());
                let pred = p.forward(&mut cx, y)?;
                mse_loss(cx.graph, pred, target)?
            }
        };
        let binding = cx.finish();
        Ok((graph, loss, binding))
    }

    /// Eval-mode representations in the method's comparison space:
    /// one row per image, one row per response, and how to compare them.
    pub fn representations(
        &self,
        images: &Tensor<T>,
        responses: &Tensor<T>,
    ) -> Result<(Tensor<f64>, Tensor<f64>, Similarity)> {
        if images.ndim() != 4 || responses.ndim() != 2 {
            return Err(invalid!(
                "representations need [B,c,64,64] images and [R,n] responses, got {:?} and {:?}",
                images.shape(),
                responses.shape()
            ));
        }
        let flat = |t: Tensor<T>| -> Result<Tensor<f64>> {
            let rows = t.shape()[0];
            t.cast::<f64>().reshape(vec![rows, t.numel() / rows])
        };
        Ok(match &self.network {
            Network::Vna(p) => (
                flat(p.encode_images(&self.encoder_input(images))?)?,
                flat(p.encode_responses(responses)?)?,
                Similarity::Cosine,
            ),
            Network::DirectEncode(p) => (
                flat(p.predict(&self.encoder_input(images))?)?,
                flat(responses.clone())?,
                Similarity::NegEuclidean,
            ),
            Network::DirectDecode(p) => (
                flat(images.clone())?,
                flat(p.predict(responses)?)?,
                Similarity::NegEuclidean,
            ),
        })
    }
}
