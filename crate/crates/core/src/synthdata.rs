//! Synthetic stimuli and responses with a known forward model.
//!
//! Stimuli are superpositions of oriented Gabor patches on a smooth
//! background. Responses come from a fixed random feature map followed by
//! a softplus tuning layer, plus trial-to-trial Gaussian variability whose
//! scale is proportional to each neuron's mean rate.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::IMAGE_SIZE;
use crate::error::{invalid, shape_err, Result};
use crate::seed::{derived_rng, stream};
use crate::tensor::Tensor;

/// Side of the downsampled image the feature map sees.
pub const FEATURE_GRID: usize = 16;
/// Dimension of the fixed random feature map.
pub const FEATURE_DIM: usize = 64;

const POOL: usize = IMAGE_SIZE / FEATURE_GRID;

/// `c×64×64` images with values in `[0,1]`, stored as `[S, c, 64, 64]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StimulusSet {
    pub channels: usize,
    pub images: Tensor<f32>,
}

impl StimulusSet {
    pub fn new(images: Tensor<f32>) -> Result<Self> {
        match *images.shape() {
            [_, c, h, w] if h == IMAGE_SIZE && w == IMAGE_SIZE => Ok(StimulusSet { channels: c, images }),
            ref s => Err(shape_err!("stimulus set must be [S,c,64,64], got {s:?}")),
        }
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image(&self, s: usize) -> &[f32] {
        self.images.row(s)
    }
}

/// Nonnegative firing rates, stored as `[S, T, n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseSet {
    pub data: Tensor<f32>,
}

impl ResponseSet {
    pub fn new(data: Tensor<f32>) -> Result<Self> {
        if data.ndim() != 3 {
            return Err(shape_err!("response set must be [S,T,n], got {:?}", data.shape()));
        }
        Ok(ResponseSet { data })
    }

    pub fn stimuli(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn trials(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn neurons(&self) -> usize {
        self.data.shape()[2]
    }

    /// Response of stimulus `s` on trial `t`.
    pub fn trial(&self, s: usize, t: usize) -> &[f32] {
        let n = self.neurons();
        let start = (s * self.trials() + t) * n;
        &self.data.data()[start..start + n]
    }
}

/// Trial-to-trial variability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseModel {
    /// `max(0, r + σ·r̄·ε)` with `ε ~ N(0,1)` per neuron and trial.
    Gaussian { sigma: f64 },
    /// `max(0, r̄·(1 + ε))`: the limit of unbounded noise, where responses
    /// carry no information about the stimulus.
    PureNoise,
}

impl NoiseModel {
    pub fn validate(self) -> Result<()> {
        match self {
            NoiseModel::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(invalid!("noise level must be finite and >= 0, got {sigma}"))
            }
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for NoiseModel {
    type Err = crate::Error;
    /// A nonnegative number, or `inf` for [`NoiseModel::PureNoise`].
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if matches!(t.as_str(), "inf" | "infinity" | "pure" | "pure-noise") {
            return Ok(NoiseModel::PureNoise);
        }
        let sigma: f64 = t.parse().map_err(|_| invalid!("invalid noise level {s:?}"))?;
        let m = NoiseModel::Gaussian { sigma };
        m.validate()?;
        Ok(m)
    }
}

/// Ground-truth map from images to mean firing rates:
/// `r(M) = softplus(W·φ(M) + b)` with
/// `φ(M) = tanh(P·(pool₄(M) − ½))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardModel {
    pub seed: u64,
    /// Seed of the trial-to-trial noise; the model seed unless redrawn.
    pub noise_seed: u64,
    pub channels: usize,
    pub neurons: usize,
    /// `P`, row-major `[64, 256·c]`.
    pub projection: Vec<f64>,
    /// `W`, row-major `[n, 64]`.
    pub tuning: Vec<f64>,
    /// `b`, strictly positive.
    pub baseline: Vec<f64>,
    pub noise: NoiseModel,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl ForwardModel {
    pub fn new(seed: u64, channels: usize, neurons: usize, noise: NoiseModel) -> Result<Self> {
        if channels == 0 || neurons == 0 {
            return Err(invalid!("forward model needs channels and neurons >= 1"));
        }
        noise.validate()?;
        let mut rng = derived_rng(seed, &[stream::FORWARD_MODEL]);
        let inputs = FEATURE_GRID * FEATURE_GRID * channels;
        let gain = 4.0 / (inputs as f64).sqrt();
        let normal = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        let projection = (0..FEATURE_DIM * inputs).map(|_| gain * normal(&mut rng)).collect();
        let tuning_scale = 2.0 / (FEATURE_DIM as f64).sqrt();
        let tuning = (0..neurons * FEATURE_DIM).map(|_| tuning_scale * normal(&mut rng)).collect();
        let baseline = (0..neurons).map(|_| rng.random_range(0.5..1.5)).collect();
        Ok(ForwardModel {
            seed,
            noise_seed: seed,
            channels,
            neurons,
            projection,
            tuning,
            baseline,
            noise,
        })
    }

    /// `φ(M)` for one `c×64×64` image.
    pub fn features(&self, image: &[f32]) -> Result<Vec<f64>> {
        let side = IMAGE_SIZE;
        if image.len() != self.channels * side * side {
            return Err(shape_err!(
                "forward model expects {}x64x64 images, got {} values",
                self.channels,
                image.len()
            ));
        }
        let mut pooled = Vec::with_capacity(self.channels * FEATURE_GRID * FEATURE_GRID);
        for ch in image.chunks(side * side) {
            for gy in 0..FEATURE_GRID {
                for gx in 0..FEATURE_GRID {
                    let mut acc = 0.0f64;
                    for y in gy * POOL..(gy + 1) * POOL {
                        for x in gx * POOL..(gx + 1) * POOL {
                            acc += ch[y * side + x] as f64;
                        }
                    }
                    pooled.push(acc / (POOL * POOL) as f64 - 0.5);
                }
            }
        }
        Ok(self
            .projection
            .chunks(pooled.len())
            .map(|row| row.iter().zip(&pooled).map(|(p, x)| p * x).sum::<f64>().tanh())
            .collect())
    }

    /// Noise-free rates `r(M)`, all strictly positive.
    pub fn clean_rates(&self, image: &[f32]) -> Result<Vec<f64>> {
        let phi = self.features(image)?;
        Ok(self
            .tuning
            .chunks(FEATURE_DIM)
            .zip(&self.baseline)
            .map(|(w, b)| softplus(w.iter().zip(&phi).map(|(a, x)| a * x).sum::<f64>() + b))
            .collect())
    }

    /// Clean rates for every stimulus, `[S, n]`.
    pub fn clean_rate_matrix(&self, stimuli: &StimulusSet) -> Result<Tensor<f64>> {
        if stimuli.channels != self.channels {
            return Err(shape_err!(
                "forward model has {} channels, stimuli have {}",
                self.channels,
                stimuli.channels
            ));
        }
        let rows: Vec<Vec<f64>> = (0..stimuli.len())
            .into_par_iter()
            .map(|s| self.clean_rates(stimuli.image(s)))
            .collect::<Result<_>>()?;
        Tensor::new(vec![stimuli.len(), self.neurons], rows.concat())
    }

    /// The same model restricted to the neurons at `indices`.
    pub fn restrict(&self, indices: &[usize]) -> Result<Self> {
        if indices.iter().any(|&i| i >= self.neurons) {
            return Err(invalid!("neuron index out of range for {} neurons", self.neurons));
        }
        Ok(ForwardModel {
            neurons: indices.len(),
            tuning: indices
                .iter()
                .flat_map(|&i| self.tuning[i * FEATURE_DIM..(i + 1) * FEATURE_DIM].iter().copied())
                .collect(),
            baseline: indices.iter().map(|&i| self.baseline[i]).collect(),
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let inputs = FEATURE_GRID * FEATURE_GRID * self.channels;
        if self.projection.len() != FEATURE_DIM * inputs
            || self.tuning.len() != self.neurons * FEATURE_DIM
            || self.baseline.len() != self.neurons
        {
            return Err(shape_err!("forward model arrays do not match c={} n={}", self.channels, self.neurons));
        }
        self.noise.validate()
    }
}

/// Shape and seed of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetSpec {
    pub stimuli: usize,
    pub channels: usize,
    pub neurons: usize,
    pub trials: usize,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stimuli < 2 || self.trials < 1 || self.neurons < 1 || self.channels < 1 {
            return Err(invalid!(
                "synthetic dataset needs S >= 2, T >= 1, n >= 1, c >= 1 (got S={}, T={}, n={}, c={})",
                self.stimuli,
                self.trials,
                self.neurons,
                self.channels
            ));
        }
        self.noise.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SyntheticDatasetSpec,
    pub stimuli: StimulusSet,
    pub responses: ResponseSet,
    pub model: ForwardModel,
}

pub fn generate(spec: &SyntheticDatasetSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let stimuli = gen_stimuli(spec.stimuli, spec.channels, spec.seed)?;
    let model = ForwardModel::new(spec.seed, spec.channels, spec.neurons, spec.noise)?;
    let responses = gen_responses(&stimuli, &model, spec.trials)?;
    Ok(SyntheticDataset {
        spec: spec.clone(),
        stimuli,
        responses,
        model,
    })
}

struct Gabor {
    cx: f64,
    cy: f64,
    cos_t: f64,
    sin_t: f64,
    freq: f64,
    width: f64,
    phase: f64,
    amplitude: Vec<f64>,
}

fn draw_image(rng: &mut impl Rng, channels: usize) -> Vec<f32> {
    let side = IMAGE_SIZE as f64;
    let level: Vec<f64> = (0..channels).map(|_| rng.random_range(0.35..0.65)).collect();
    let slope: Vec<(f64, f64)> = (0..channels)
        .map(|_| (rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25)))
        .collect();
    let count = rng.random_range(3..=6);
    let shared: f64 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let patches: Vec<Gabor> = (0..count)
        .map(|_| {
            let theta = rng.random_range(0.0..PI);
            let strength = rng.random_range(0.15..0.35) * if rng.random_bool(0.5) { shared } else { -shared };
            Gabor {
                cx: rng.random_range(8.0..side - 8.0),
                cy: rng.random_range(8.0..side - 8.0),
                cos_t: theta.cos(),
                sin_t: theta.sin(),
                freq: 2.0 * PI / rng.random_range(6.0..20.0),
                width: rng.random_range(4.0..12.0),
                phase: rng.random_range(0.0..2.0 * PI),
                amplitude: (0..channels).map(|_| strength * rng.random_range(0.6..1.0)).collect(),
            }
        })
        .collect();
    let mut out = Vec::with_capacity(channels * IMAGE_SIZE * IMAGE_SIZE);
    for ch in 0..channels {
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                let (xf, yf) = (x as f64, y as f64);
                let mut v = level[ch] + slope[ch].0 * (xf / side - 0.5) + slope[ch].1 * (yf / side - 0.5);
                for g in &patches {
                    let (dx, dy) = (xf - g.cx, yf - g.cy);
                    let along = dx * g.cos_t + dy * g.sin_t;
                    let envelope = (-(dx * dx + dy * dy) / (2.0 * g.width * g.width)).exp();
                    v += g.amplitude[ch] * envelope * (g.freq * along + g.phase).cos();
                }
                out.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    out
}

/// `S` seeded Gabor-collage images. Image `i` depends only on `(seed, i)`.
pub fn gen_stimuli(count: usize, channels: usize, seed: u64) -> Result<StimulusSet> {
    if count == 0 || channels == 0 {
        return Err(invalid!("need at least one stimulus and one channel"));
    }
    let images: Vec<Vec<f32>> = (0..count)
        .into_par_iter()
        .map(|i| draw_image(&mut derived_rng(seed, &[stream::STIMULUS, i as u64]), channels))
        .collect();
    StimulusSet::new(Tensor::new(vec![count, channels, IMAGE_SIZE, IMAGE_SIZE], images.concat())?)
}

/// `T` noisy trials per stimulus. The noise of `(s, t)` depends only on
/// `(model.noise_seed, s, t)`.
pub fn gen_responses(stimuli: &StimulusSet, model: &ForwardModel, trials: usize) -> Result<ResponseSet> {
    if trials == 0 {
        return Err(invalid!("need at least one trial"));
    }
    let clean = model.clean_rate_matrix(stimuli)?;
    let (count, n) = (stimuli.len(), model.neurons);
    let mut mean_rate = vec![0.0f64; n];
    for row in clean.data().chunks(n) {
        for (m, r) in mean_rate.iter_mut().zip(row) {
            *m += r / count as f64;
        }
    }
    let blocks: Vec<Vec<f32>> = (0..count)
        .into_par_iter()
        .map(|s| {
            let rates = clean.row(s);
            let mut out = Vec::with_capacity(trials * n);
            for t in 0..trials {
                let mut rng = derived_rng(model.noise_seed, &[stream::TRIAL_NOISE, s as u64, t as u64]);
                for (r, rbar) in rates.iter().zip(&mean_rate) {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    let v = match model.noise {
                        NoiseModel::Gaussian { sigma: 0.0 } => *r,
                        NoiseModel::Gaussian { sigma } => r + sigma * rbar * eps,
                        NoiseModel::PureNoise => rbar * (1.0 + eps),
                    };
                    out.push(v.max(0.0) as f32);
                }
            }
            out
        })
        .collect();
    ResponseSet::new(Tensor::new(vec![count, trials, n], blocks.concat())?)
}

/// Keeps `m` of the `n` neurons, chosen uniformly without replacement and
/// returned in their original order alongside their indices.
pub fn subsample_neurons(responses: &ResponseSet, m: usize, seed: u64) -> Result<(ResponseSet, Vec<usize>)> {
    let n = responses.neurons();
    if m == 0 || m > n {
        return Err(invalid!("cannot keep {m} of {n} neurons"));
    }
    let mut keep = sample(&mut derived_rng(seed, &[stream::SUBSAMPLE]), n, m).into_vec();
    keep.sort_unstable();
    let rows = responses.stimuli() * responses.trials();
    let mut data = Vec::with_capacity(rows * m);
    for row in responses.data.data().chunks(n) {
        data.extend(keep.iter().map(|&i| row[i]));
    }
    let out = ResponseSet::new(Tensor::new(vec![responses.stimuli(), responses.trials(), m], data)?)?;
    Ok((out, keep))
}
