//! On-disk dataset container, train/test splits, per-neuron statistics and
//! run configuration.
//!
//! A container is a directory holding
//!
//! | file                  | contents                                                  |
//! |-----------------------|-----------------------------------------------------------|
//! | `manifest.json`       | [`Manifest`]: schema version, shape, dtype, byte order    |
//! | `images.bin`          | little-endian `f32`, row-major `[S, c, 64, 64]`           |
//! | `responses.bin`       | little-endian `f32`, row-major `[S, T, n]`                |
//! | `splits.json`         | [`Splits`]: sorted train and test stimulus indices        |
//! | `stats.json`          | [`NeuronStats`]: per-neuron train-split mean and std      |
//! | `forward_model.json`  | optional [`ForwardModel`] for synthetic data              |
//!
//! Every file is written to a temporary sibling and renamed into place; the
//! manifest is written last.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::encoders::IMAGE_SIZE;
use crate::error::{invalid, Error, Result};
use crate::evaluation::Method;
use crate::scalar::{DType, Scalar};
use crate::seed::{derived_rng, stream};
use crate::synthdata::{
    gen_responses, subsample_neurons, ForwardModel, NoiseModel, ResponseSet, StimulusSet, SyntheticDataset,
};
use crate::tensor::Tensor;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_FILE: &str = "images.bin";
pub const RESPONSES_FILE: &str = "responses.bin";
pub const SPLITS_FILE: &str = "splits.json";
pub const STATS_FILE: &str = "stats.json";
pub const FORWARD_MODEL_FILE: &str = "forward_model.json";
pub const BYTE_ORDER: &str = "little-endian";
/// Floor applied to per-neuron standard deviations.
pub const STD_FLOOR: f64 = 1e-6;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub name: String,
    pub stimuli: usize,
    pub channels: usize,
    pub neurons: usize,
    pub trials: usize,
    pub image_size: usize,
    pub dtype: DType,
    pub byte_order: String,
    /// Generator seed for synthetic data.
    pub seed: Option<u64>,
    pub test_fraction: f64,
    pub split_seed: u64,
    /// File holding the forward model, when there is one.
    pub forward_model: Option<String>,
    /// Indices into the original population when neurons were subsampled.
    pub neuron_indices: Option<Vec<usize>>,
}

impl Manifest {
    pub fn image_count(&self) -> usize {
        self.stimuli * self.channels * self.image_size * self.image_size
    }

    pub fn response_count(&self) -> usize {
        self.stimuli * self.trials * self.neurons
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn validate(&self, stimuli: usize) -> Result<()> {
        let mut seen = vec![false; stimuli];
        for &i in self.train.iter().chain(&self.test) {
            match seen.get_mut(i) {
                None => return Err(Error::Data(format!("split index {i} out of range for {stimuli} stimuli"))),
                Some(true) => return Err(Error::Data(format!("stimulus {i} appears twice in the splits"))),
                Some(s) => *s = true,
            }
        }
        if self.train.is_empty() {
            return Err(Error::Data("train split is empty".into()));
        }
        Ok(())
    }
}

/// `floor(S·test_fraction)` test stimuli chosen by a seeded permutation;
/// the rest train. Both lists are sorted.
pub fn split_dataset(stimuli: usize, test_fraction: f64, seed: u64) -> Result<Splits> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid!("test fraction must lie in (0, 1), got {test_fraction}"));
    }
    let n_test = (stimuli as f64 * test_fraction).floor() as usize;
    if n_test < 2 || n_test >= stimuli {
        return Err(invalid!(
            "splitting {stimuli} stimuli at {test_fraction} gives {n_test} test items; need at least 2 test and 1 train"
        ));
    }
    let mut perm: Vec<usize> = (0..stimuli).collect();
    perm.shuffle(&mut derived_rng(seed, &[stream::SPLIT]));
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(Splits { train, test })
}

/// Per-neuron mean and population standard deviation over the train split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Statistics over every trial of every train stimulus; the standard
/// deviation is floored at [`STD_FLOOR`].
pub fn compute_stats(responses: &ResponseSet, train: &[usize]) -> Result<NeuronStats> {
    if train.is_empty() {
        return Err(invalid!("cannot compute statistics over an empty train split"));
    }
    let n = responses.neurons();
    let count = (train.len() * responses.trials()) as f64;
    let mut mean = vec![0.0f64; n];
    for &s in train {
        for t in 0..responses.trials() {
            for (m, &v) in mean.iter_mut().zip(responses.trial(s, t)) {
                *m += v as f64;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0f64; n];
    for &s in train {
        for t in 0..responses.trials() {
            for ((acc, &v), m) in var.iter_mut().zip(responses.trial(s, t)).zip(&mean) {
                *acc += (v as f64 - m).powi(2);
            }
        }
    }
    let std = var.iter().map(|v| (v / count).sqrt().max(STD_FLOOR)).collect();
    Ok(NeuronStats { mean, std })
}

impl NeuronStats {
    /// `(v − mean) / std` for every row of `[S, T, n]` responses.
    pub fn zscore<T: Scalar>(&self, responses: &ResponseSet) -> Result<Tensor<T>> {
        let n = responses.neurons();
        if self.mean.len() != n || self.std.len() != n {
            return Err(Error::Data(format!(
                "statistics cover {} neurons, responses have {n}",
                self.mean.len()
            )));
        }
        let data = responses
            .data
            .data()
            .chunks(n)
            .flat_map(|row| {
                row.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((&v, m), s)| T::of((v as f64 - m) / s))
            })
            .collect();
        Tensor::new(responses.data.shape().to_vec(), data)
    }

    fn validate(&self, neurons: usize) -> Result<()> {
        if self.mean.len() != neurons || self.std.len() != neurons {
            return Err(Error::Data(format!("{STATS_FILE} does not cover {neurons} neurons")));
        }
        if self.mean.iter().chain(&self.std).any(|v| !v.is_finite()) || self.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Data(format!("{STATS_FILE} holds non-finite or non-positive values")));
        }
        Ok(())
    }
}

/// A loaded container.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub stimuli: StimulusSet,
    pub responses: ResponseSet,
    pub splits: Splits,
    pub stats: NeuronStats,
    pub forward_model: Option<ForwardModel>,
}

impl Dataset {
    /// Assembles a container from arrays, splitting and computing
    /// statistics.
    pub fn build(
        name: impl Into<String>,
        stimuli: StimulusSet,
        responses: ResponseSet,
        test_fraction: f64,
        split_seed: u64,
    ) -> Result<Self> {
        if responses.stimuli() != stimuli.len() {
            return Err(Error::Data(format!(
                "{} images but responses for {} stimuli",
                stimuli.len(),
                responses.stimuli()
            )));
        }
        let splits = split_dataset(stimuli.len(), test_fraction, split_seed)?;
        let stats = compute_stats(&responses, &splits.train)?;
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            name: name.into(),
            stimuli: stimuli.len(),
            channels: stimuli.channels,
            neurons: responses.neurons(),
            trials: responses.trials(),
            image_size: IMAGE_SIZE,
            dtype: DType::F32,
            byte_order: BYTE_ORDER.into(),
            seed: None,
            test_fraction,
            split_seed,
            forward_model: None,
            neuron_indices: None,
        };
        Ok(Dataset {
            manifest,
            stimuli,
            responses,
            splits,
            stats,
            forward_model: None,
        })
    }

    /// Container for generated data; the split seed is the generator seed.
    pub fn from_synthetic(name: impl Into<String>, ds: SyntheticDataset, test_fraction: f64) -> Result<Self> {
        let mut out = Self::build(name, ds.stimuli, ds.responses, test_fraction, ds.spec.seed)?;
        out.manifest.seed = Some(ds.spec.seed);
        out.manifest.forward_model = Some(FORWARD_MODEL_FILE.into());
        out.forward_model = Some(ds.model);
        Ok(out)
    }

    /// Keeps `m` neurons chosen by `seed`, restricting the forward model and
    /// recomputing statistics.
    pub fn subsample(&self, m: usize, seed: u64) -> Result<Self> {
        let (responses, keep) = subsample_neurons(&self.responses, m, seed)?;
        let stats = compute_stats(&responses, &self.splits.train)?;
        let forward_model = self.forward_model.as_ref().map(|f| f.restrict(&keep)).transpose()?;
        let neuron_indices = match &self.manifest.neuron_indices {
            Some(prev) => keep.iter().map(|&i| prev[i]).collect(),
            None => keep,
        };
        Ok(Dataset {
            manifest: Manifest {
                neurons: m,
                neuron_indices: Some(neuron_indices),
                ..self.manifest.clone()
            },
            responses,
            stats,
            forward_model,
            ..self.clone()
        })
    }

    /// Regenerates the responses from the forward model at another noise
    /// level, optionally with a fresh noise draw, keeping stimuli and splits.
    pub fn with_noise(&self, noise: NoiseModel, noise_seed: Option<u64>) -> Result<Self> {
        let model = self
            .forward_model
            .as_ref()
            .ok_or_else(|| Error::Data("noise override needs a dataset with a forward model".into()))?;
        let model = ForwardModel {
            noise,
            noise_seed: noise_seed.unwrap_or(model.noise_seed),
            ..model.clone()
        };
        model.validate()?;
        let responses = gen_responses(&self.stimuli, &model, self.manifest.trials)?;
        let stats = compute_stats(&responses, &self.splits.train)?;
        Ok(Dataset {
            responses,
            stats,
            forward_model: Some(model),
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if self.stimuli.images.shape() != [m.stimuli, m.channels, m.image_size, m.image_size] {
            return Err(Error::Data(format!("images {:?} disagree with the manifest", self.stimuli.images.shape())));
        }
        if self.responses.data.shape() != [m.stimuli, m.trials, m.neurons] {
            return Err(Error::Data(format!(
                "responses {:?} disagree with the manifest",
                self.responses.data.shape()
            )));
        }
        self.splits.validate(m.stimuli)?;
        self.stats.validate(m.neurons)?;
        if let Some(f) = &self.forward_model {
            f.validate()?;
            if f.channels != m.channels || f.neurons != m.neurons {
                return Err(Error::Data("forward model shape disagrees with the manifest".into()));
            }
        }
        Ok(())
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it over
/// `path`, so readers see either the old or the new file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<V: DeserializeOwned>(path: &Path) -> Result<V> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    values.iter().for_each(|v| v.write_le(&mut out));
    out
}

/// Reads a blob of `count` little-endian `f32`, checking the byte length
/// before decoding and rejecting non-finite values.
fn read_f32_blob(path: &Path, count: usize) -> Result<Vec<f32>> {
    let expected = count as u64 * 4;
    let actual = fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    if actual != expected {
        return Err(Error::Data(format!(
            "{} has {actual} bytes, expected {expected} ({count} f32 values)",
            path.display()
        )));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() as u64 != expected {
        return Err(Error::Data(format!("{} changed size while reading", path.display())));
    }
    let values: Vec<f32> = bytes.chunks_exact(4).map(f32::read_le).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("{} holds a non-finite value at element {i}", path.display())));
    }
    Ok(values)
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join(IMAGES_FILE), &f32_bytes(dataset.stimuli.images.data()))?;
    write_atomic(&dir.join(RESPONSES_FILE), &f32_bytes(dataset.responses.data.data()))?;
    write_json(&dir.join(SPLITS_FILE), &dataset.splits)?;
    write_json(&dir.join(STATS_FILE), &dataset.stats)?;
    let mut manifest = dataset.manifest.clone();
    manifest.forward_model = None;
    if let Some(model) = &dataset.forward_model {
        write_json(&dir.join(FORWARD_MODEL_FILE), model)?;
        manifest.forward_model = Some(FORWARD_MODEL_FILE.into());
    }
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Data(format!(
            "unsupported dataset schema version {} (expected {SCHEMA_VERSION})",
            manifest.schema_version
        )));
    }
    if manifest.dtype != DType::F32 || manifest.byte_order != BYTE_ORDER {
        return Err(Error::Data(format!(
            "unsupported blob encoding {} {} (expected f32 {BYTE_ORDER})",
            manifest.dtype.name(),
            manifest.byte_order
        )));
    }
    if manifest.image_size != IMAGE_SIZE {
        return Err(Error::Data(format!("images must be {IMAGE_SIZE}x{IMAGE_SIZE}, manifest says {}", manifest.image_size)));
    }
    if manifest.stimuli < 2 || manifest.channels == 0 || manifest.neurons == 0 || manifest.trials == 0 {
        return Err(Error::Data(format!("degenerate dataset shape in {}", dir.join(MANIFEST_FILE).display())));
    }
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let images = read_f32_blob(&dir.join(IMAGES_FILE), manifest.image_count())?;
    let responses = read_f32_blob(&dir.join(RESPONSES_FILE), manifest.response_count())?;
    let (s, c, side) = (manifest.stimuli, manifest.channels, manifest.image_size);
    let stimuli = StimulusSet::new(Tensor::new(vec![s, c, side, side], images)?)?;
    let responses = ResponseSet::new(Tensor::new(vec![s, manifest.trials, manifest.neurons], responses)?)?;
    let splits = read_json(&dir.join(SPLITS_FILE))?;
    let stats = read_json(&dir.join(STATS_FILE))?;
    let forward_model = manifest
        .forward_model
        .as_ref()
        .map(|f| read_json::<ForwardModel>(&dir.join(f)))
        .transpose()?;
    let dataset = Dataset {
        manifest,
        stimuli,
        responses,
        splits,
        stats,
        forward_model,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Everything that determines a training and evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    /// Latent dimension of the alignment model.
    pub d: usize,
    /// Batch size `N`.
    pub batch_size: usize,
    /// Candidates per retrieval task.
    pub k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// One training run per seed.
    pub seeds: Vec<u64>,
    pub data: Option<PathBuf>,
    /// Regenerate responses at this noise level (synthetic data only).
    pub noise: Option<NoiseModel>,
    /// Seed of the regenerated noise; the dataset's own when unset.
    pub noise_seed: Option<u64>,
    /// Keep this many neurons.
    pub subsample: Option<usize>,
    /// Seed of the neuron subsample.
    pub subsample_seed: u64,
    /// Precision of training arithmetic.
    pub precision: DType,
    /// Feed images as `x − ½` instead of `x`.
    pub center_images: bool,
    /// Contrastive logit temperature; `None` is the plain objective.
    pub temperature: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Vna,
            d: 64,
            batch_size: 256,
            k: 400,
            learning_rate: 0.01,
            epochs: 100,
            seeds: vec![0],
            data: None,
            noise: None,
            noise_seed: None,
            subsample: None,
            subsample_seed: 0,
            precision: DType::F32,
            center_images: false,
            temperature: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.batch_size == 0 {
            return Err(invalid!("d and batch size must be positive"));
        }
        if self.k < 2 {
            return Err(invalid!("K must be at least 2, got {}", self.k));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.seeds.is_empty() {
            return Err(invalid!("at least one seed is required"));
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0 && t.is_finite()) {
                return Err(invalid!("temperature must be positive, got {t}"));
            }
        }
        if let Some(noise) = self.noise {
            noise.validate()?;
        }
        Ok(())
    }

    /// The dataset after the configured noise and subsample overrides.
    pub fn prepare(&self, dataset: Dataset) -> Result<Dataset> {
        let dataset = match (self.noise, self.noise_seed) {
            (Some(noise), seed) => dataset.with_noise(noise, seed)?,
            (None, Some(_)) => return Err(invalid!("a noise seed needs a noise level")),
            (None, None) => dataset,
        };
        match self.subsample {
            Some(m) => dataset.subsample(m, self.subsample_seed),
            None => Ok(dataset),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, SyntheticDatasetSpec};

    fn small(seed: u64) -> Dataset {
        let spec = SyntheticDatasetSpec {
            stimuli: 10,
            channels: 1,
            neurons: 7,
            trials: 3,
            noise: NoiseModel::Gaussian { sigma: 0.5 },
            seed,
        };
        Dataset::from_synthetic("small", generate(&spec).unwrap(), 0.2).unwrap()
    }

    #[test]
    fn split_examples() {
        let s = split_dataset(10, 0.2, 1).unwrap();
        assert_eq!((s.test.len(), s.train.len()), (2, 8));
        assert_eq!(s, split_dataset(10, 0.2, 1).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_dataset(200, 0.2, 0).unwrap().test.len(), 40);
        assert!(split_dataset(10, 0.1, 1).is_err());
        assert!(split_dataset(10, 1.0, 1).is_err());
        assert!(split_dataset(10, 0.0, 1).is_err());
    }

    #[test]
    fn stats_examples() {
        let r = ResponseSet::new(Tensor::from_f64(vec![2, 1, 2], &[0.0, 3.0, 2.0, 3.0]).unwrap()).unwrap();
        let st = compute_stats(&r, &[0, 1]).unwrap();
        assert_eq!(st.mean, vec![1.0, 3.0]);
        assert_eq!(st.std, vec![1.0, STD_FLOOR]);
        let r2 = ResponseSet::new(Tensor::from_f64(vec![3, 1, 2], &[0.0, 3.0, 2.0, 3.0, 99.0, -4.0]).unwrap()).unwrap();
        assert_eq!(compute_stats(&r2, &[0, 1]).unwrap(), st);
        assert!(compute_stats(&r, &[]).is_err());
    }

    #[test]
    fn zscored_train_responses_are_standardised() {
        let ds = small(3);
        let z = ds.stats.zscore::<f64>(&ds.responses).unwrap();
        let n = ds.manifest.neurons;
        for j in 0..n {
            let xs: Vec<f64> = ds
                .splits
                .train
                .iter()
                .flat_map(|&s| (0..ds.manifest.trials).map(move |t| (s, t)))
                .map(|(s, t)| z.data()[(s * ds.manifest.trials + t) * n + j])
                .collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
            assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-3, "neuron {j}: {m} {v}");
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small(4);
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        let bytes = |f: &str| fs::read(dir.path().join(f)).unwrap();
        let first: Vec<Vec<u8>> = [IMAGES_FILE, RESPONSES_FILE, MANIFEST_FILE].iter().map(|f| bytes(f)).collect();
        write_dataset(&back, dir.path()).unwrap();
        let second: Vec<Vec<u8>> = [IMAGES_FILE, RESPONSES_FILE, MANIFEST_FILE].iter().map(|f| bytes(f)).collect();
        assert_eq!(first, second);
        assert_eq!(bytes(IMAGES_FILE).len(), 4 * 10 * 64 * 64);
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&small(5), dir.path()).unwrap();
        let path = dir.path().join(RESPONSES_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, &bytes).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("836 bytes, expected 840"), "{err}");

        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("non-finite value at element 209"), "{err}");

        write_dataset(&small(5), dir.path()).unwrap();
        let mpath = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 9");
        fs::write(&mpath, text).unwrap();
        assert!(read_dataset(dir.path()).unwrap_err().to_string().contains("schema version 9"));
    }

    #[test]
    fn overrides() {
        let ds = small(6);
        let sub = ds.subsample(3, 1).unwrap();
        assert_eq!(sub.manifest.neurons, 3);
        assert_eq!(sub.stats.mean.len(), 3);
        let idx = sub.manifest.neuron_indices.clone().unwrap();
        assert_eq!(sub.responses.trial(4, 2), idx.iter().map(|&i| ds.responses.trial(4, 2)[i]).collect::<Vec<_>>());
        sub.validate().unwrap();
        let quiet = ds.with_noise(NoiseModel::Gaussian { sigma: 0.0 }, None).unwrap();
        assert_eq!(quiet.responses.trial(0, 0), quiet.responses.trial(0, 1));
        assert_eq!(quiet.stimuli, ds.stimuli);
        let same = ds.with_noise(NoiseModel::Gaussian { sigma: 0.5 }, None).unwrap();
        assert_eq!(same.responses, ds.responses);
        let redrawn = ds.with_noise(NoiseModel::Gaussian { sigma: 0.5 }, Some(99)).unwrap();
        assert_ne!(redrawn.responses, ds.responses);
        let cfg = RunConfig {
            subsample: Some(2),
            noise: Some(NoiseModel::PureNoise),
            ..RunConfig::default()
        };
        let prepared = cfg.prepare(ds).unwrap();
        assert_eq!(prepared.manifest.neurons, 2);
    }

    #[test]
    fn run_config_defaults_and_json() {
        let c = RunConfig::default();
        assert_eq!((c.d, c.batch_size, c.k, c.learning_rate, c.epochs), (64, 256, 400, 0.01, 100));
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), c);
        let partial: RunConfig = serde_json::from_str(r#"{"epochs": 3, "method": "direct-decode"}"#).unwrap();
        assert_eq!((partial.epochs, partial.method, partial.d), (3, Method::DirectDecode, 64));
        assert!(serde_json::from_str::<RunConfig>(r#"{"epoch": 3}"#).is_err());
        assert!(RunConfig { k: 1, ..c.clone() }.validate().is_err());
    }
}
