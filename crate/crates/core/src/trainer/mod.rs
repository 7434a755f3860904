//! Mini-batch training with Adam for all three methods, training history
//! and checkpoints.

mod adam;
mod checkpoint;
mod model;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint_meta, save_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};
pub use model::{ModelParams, ModelSpec, Network};

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, RunConfig};
use crate::encoders::ArchHyper;
use crate::error::{invalid, Error, Result};
use crate::evaluation::{run_evaluation, EvalReport, EvalSetup, Method, RepresentationScorer, Similarity};
use crate::scalar::Scalar;
use crate::seed::{derived_rng, stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub method: Method,
    pub seed: u64,
    /// Batch size actually used (after clamping to the train split).
    pub batch_size: usize,
    pub config: RunConfig,
    /// Example-weighted mean batch loss of each completed epoch.
    pub epoch_loss: Vec<f64>,
    /// Wall-clock seconds of each completed epoch.
    pub epoch_seconds: Vec<f64>,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.epoch_loss.len()
    }
}

/// Parameters, optimiser state and history: everything a checkpoint holds.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub params: ModelParams<T>,
    pub adam: AdamState<T>,
    pub history: TrainHistory,
}

/// Training inputs in the working precision: images in `[0,1]` and
/// z-scored responses.
pub struct TrainData<T> {
    images: Tensor<T>,
    responses: Tensor<T>,
    trials: usize,
    neurons: usize,
    train: Vec<usize>,
}

impl<T: Scalar> TrainData<T> {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        Ok(TrainData {
            images: dataset.stimuli.images.cast(),
            responses: dataset.stats.zscore(&dataset.responses)?,
            trials: dataset.manifest.trials,
            neurons: dataset.manifest.neurons,
            train: dataset.splits.train.clone(),
        })
    }

    /// Every (stimulus, trial) pair of the train split.
    pub fn examples(&self) -> Vec<(usize, usize)> {
        self.train
            .iter()
            .flat_map(|&s| (0..self.trials).map(move |t| (s, t)))
            .collect()
    }

    pub fn images_of(&self, stimuli: impl IntoIterator<Item = usize>) -> Result<Tensor<T>> {
        let mut shape = self.images.shape().to_vec();
        let mut data = Vec::new();
        let mut count = 0;
        for s in stimuli {
            data.extend_from_slice(self.images.row(s));
            count += 1;
        }
        shape[0] = count;
        Tensor::new(shape, data)
    }

    pub fn responses_of(&self, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Tensor<T>> {
        let n = self.neurons;
        let mut data = Vec::new();
        let mut count = 0;
        for (s, t) in pairs {
            let start = (s * self.trials + t) * n;
            data.extend_from_slice(&self.responses.data()[start..start + n]);
            count += 1;
        }
        Tensor::new(vec![count, n], data)
    }
}

pub fn model_spec(dataset: &Dataset, config: &RunConfig) -> ModelSpec {
    ModelSpec {
        method: config.method,
        channels: dataset.manifest.channels,
        neurons: dataset.manifest.neurons,
        d: config.d,
        center_images: config.center_images,
        temperature: config.temperature,
        hyper: ArchHyper::default(),
    }
}

/// Batch size for this method and train-set size. The contrastive loss
/// depends on `N`, so the alignment model clamps `N` to the number of
/// examples rather than train on one short batch.
fn effective_batch(method: Method, requested: usize, examples: usize) -> Result<usize> {
    if examples < 2 {
        return Err(invalid!("need at least 2 training examples, got {examples}"));
    }
    if method == Method::Vna && requested > examples {
        log::warn!("batch size {requested} exceeds the {examples} training examples; clamping");
        return Ok(examples);
    }
    Ok(requested)
}

/// Fresh parameters and optimiser for `seed`, with no epochs run.
pub fn init_state<T: Scalar>(dataset: &Dataset, config: &RunConfig, seed: u64) -> Result<TrainState<T>> {
    config.validate()?;
    let params = ModelParams::init(model_spec(dataset, config), seed)?;
    let adam = AdamState::new(AdamConfig::with_lr(config.learning_rate), params.store());
    let examples = dataset.splits.train.len() * dataset.manifest.trials;
    let history = TrainHistory {
        method: config.method,
        seed,
        batch_size: effective_batch(config.method, config.batch_size, examples)?,
        config: config.clone(),
        epoch_loss: Vec::new(),
        epoch_seconds: Vec::new(),
    };
    Ok(TrainState { params, adam, history })
}

/// Trains for `config.epochs` epochs from a seeded initialisation.
pub fn train<T: Scalar>(dataset: &Dataset, config: &RunConfig, seed: u64) -> Result<TrainState<T>> {
    let mut state = init_state(dataset, config, seed)?;
    train_until(&mut state, dataset, config.epochs)?;
    Ok(state)
}

/// Runs epochs until `total_epochs` are complete. Epoch `e` shuffles the
/// examples with a generator seeded by `(seed, e)` alone, so resuming from
/// a checkpoint replays exactly what an uninterrupted run would do.
pub fn train_until<T: Scalar>(state: &mut TrainState<T>, dataset: &Dataset, total_epochs: usize) -> Result<()> {
    let data = TrainData::<T>::new(dataset)?;
    let method = state.params.method();
    let batch = state.history.batch_size;
    let examples = data.examples();
    while state.history.epochs() < total_epochs {
        let epoch = state.history.epochs();
        let started = Instant::now();
        let mut order = examples.clone();
        order.shuffle(&mut derived_rng(state.history.seed, &[stream::EPOCH, epoch as u64]));
        let (mut weighted, mut seen) = (0.0f64, 0usize);
        for chunk in order.chunks(batch) {
            // The contrastive objective only runs on full batches; the
            // regression baselines keep the tail unless batch norm cannot
            // run on it.
            if (method == Method::Vna && chunk.len() < batch) || chunk.len() < 2 {
                continue;
            }
            let images = data.images_of(chunk.iter().map(|&(s, _)| s))?;
            let responses = data.responses_of(chunk.iter().copied())?;
            let loss = train_step(state, &images, &responses)?;
            weighted += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let mean = weighted / seen.max(1) as f64;
        state.history.epoch_loss.push(mean);
        state.history.epoch_seconds.push(started.elapsed().as_secs_f64());
        log::info!("{method} seed {} epoch {}: loss {mean:.6}", state.history.seed, epoch + 1);
    }
    Ok(())
}

/// Forward, backward, running-statistic update and one Adam step; returns
/// the batch loss.
pub fn train_step<T: Scalar>(state: &mut TrainState<T>, images: &Tensor<T>, responses: &Tensor<T>) -> Result<f64> {
    let (mut graph, loss, mut binding) = state.params.batch_loss(images, responses)?;
    let value = graph.value(loss).item()?.as_f64();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite training loss at step {}", state.adam.step + 1)));
    }
    graph.backward(loss)?;
    let grads = binding.gradients(&graph, state.params.store());
    drop(graph);
    let store = state.params.store_mut();
    binding.apply_updates(store)?;
    adam_step(store, &grads, &mut state.adam)?;
    Ok(value)
}

/// Scorer for the test split of `dataset` under a trained model.
pub fn model_scorer<T: Scalar>(params: &ModelParams<T>, dataset: &Dataset) -> Result<RepresentationScorer> {
    let data = TrainData::<T>::new(dataset)?;
    let test = &dataset.splits.test;
    let trials = dataset.manifest.trials;
    let images = data.images_of(test.iter().copied())?;
    let responses = data.responses_of(test.iter().flat_map(|&s| (0..trials).map(move |t| (s, t))))?;
    let (a, b, similarity) = params.representations(&images, &responses)?;
    RepresentationScorer::new(test, trials, a, b, similarity)
}

/// Scorer that knows the ground truth: each image is represented by its
/// clean forward-model rates and each response by its raw rates. With
/// noiseless data it is perfect.
pub fn oracle_scorer(dataset: &Dataset) -> Result<RepresentationScorer> {
    let model = dataset
        .forward_model
        .as_ref()
        .ok_or_else(|| Error::Data("the oracle scorer needs a dataset with a forward model".into()))?;
    let test = &dataset.splits.test;
    let trials = dataset.manifest.trials;
    let n = dataset.manifest.neurons;
    let mut image_rows = Vec::with_capacity(test.len() * n);
    let mut response_rows = Vec::with_capacity(test.len() * trials * n);
    for &s in test {
        image_rows.extend(model.clean_rates(dataset.stimuli.image(s))?);
        for t in 0..trials {
            response_rows.extend(dataset.responses.trial(s, t).iter().map(|&v| v as f64));
        }
    }
    // Round like the stored responses, so noiseless trials match exactly.
    let image_rows: Vec<f64> = image_rows.iter().map(|&v| v as f32 as f64).collect();
    RepresentationScorer::new(
        test,
        trials,
        Tensor::new(vec![test.len(), n], image_rows)?,
        Tensor::new(vec![test.len() * trials, n], response_rows)?,
        Similarity::NegEuclidean,
    )
}

pub fn evaluate_model<T: Scalar>(params: &ModelParams<T>, dataset: &Dataset, setup: &EvalSetup) -> Result<EvalReport> {
    let scorer = model_scorer(params, dataset)?;
    run_evaluation(&scorer, params.method().name(), setup)
}

#[cfg(test)]
mod tests;
