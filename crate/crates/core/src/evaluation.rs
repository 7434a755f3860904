//! Discriminative encoding and decoding tasks and their AUC.
//!
//! Encoding: given an image, rank `K` candidate responses (the one it
//! evoked plus `K−1` responses to other test stimuli). Decoding: given a
//! response, rank `K` candidate images. A task's AUC is the fraction of
//! distractors the true candidate outscores, with ties counting one half.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::cosine_similarity;
use crate::baselines::euclidean_distance;
use crate::error::{invalid, shape_err, Error, Result};
use crate::seed::{derived_rng, stream};
use crate::tensor::Tensor;

/// Environment variable capping the evaluation worker count.
pub const THREADS_ENV: &str = "CROSSALIGN_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Vna,
    DirectEncode,
    DirectDecode,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Vna, Method::DirectEncode, Method::DirectDecode];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vna => "vna",
            Method::DirectEncode => "direct-encode",
            Method::DirectDecode => "direct-decode",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid!("unknown method {s:?} (expected vna, direct-encode or direct-decode)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    /// Image query, response candidates.
    Encoding,
    /// Response query, image candidates.
    Decoding,
}

impl TaskMode {
    pub const BOTH: [TaskMode; 2] = [TaskMode::Encoding, TaskMode::Decoding];

    pub fn name(self) -> &'static str {
        match self {
            TaskMode::Encoding => "encoding",
            TaskMode::Decoding => "decoding",
        }
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoding" => Ok(TaskMode::Encoding),
            "decoding" => Ok(TaskMode::Decoding),
            _ => Err(invalid!("unknown task mode {s:?} (expected encoding or decoding)")),
        }
    }
}

/// A stimulus image, or the response recorded on one trial of a stimulus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemId {
    Image { stimulus: usize },
    Response { stimulus: usize, trial: usize },
}

impl ItemId {
    pub fn stimulus(self) -> usize {
        match self {
            ItemId::Image { stimulus } | ItemId::Response { stimulus, .. } => stimulus,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: usize,
    pub mode: TaskMode,
    pub query: ItemId,
    pub truth: ItemId,
    pub distractors: Vec<ItemId>,
    /// Seed of the generator that drew the distractors.
    pub seed: u64,
}

impl TaskInstance {
    /// `[truth, distractors…]`.
    pub fn candidates(&self) -> Vec<ItemId> {
        std::iter::once(self.truth).chain(self.distractors.iter().copied()).collect()
    }
}

/// `min(k, available)`, warning when clamped. Fewer than two candidates
/// cannot form a task.
pub fn effective_k(k: usize, available: usize) -> Result<usize> {
    if k < 2 {
        return Err(invalid!("K must be at least 2, got {k}"));
    }
    if available < 2 {
        return Err(invalid!("need at least 2 test stimuli to build tasks, got {available}"));
    }
    if k > available {
        log::warn!("K={k} exceeds the {available} available test stimuli; clamping to {available}");
    }
    Ok(k.min(available))
}

/// One instance per (test stimulus, trial). The distractor stimuli of the
/// instance for `(s, t)` are drawn from the other test stimuli by a
/// generator seeded from `(seed, s, t)`, so encoding and decoding tasks
/// built from the same seed share their candidate stimuli.
pub fn build_tasks(test_stimuli: &[usize], trials: usize, mode: TaskMode, k: usize, seed: u64) -> Result<Vec<TaskInstance>> {
    if trials == 0 {
        return Err(invalid!("trial count must be positive"));
    }
    let mut sorted = test_stimuli.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid!("test stimuli contain duplicates"));
    }
    let k = effective_k(k, test_stimuli.len())?;
    let mut tasks = Vec::with_capacity(test_stimuli.len() * trials);
    for (pos, &s) in test_stimuli.iter().enumerate() {
        for t in 0..trials {
            let task_seed = crate::seed::derive_seed(seed, &[stream::TASK, s as u64, t as u64]);
            let mut rng = derived_rng(task_seed, &[]);
            let others = sample(&mut rng, test_stimuli.len() - 1, k - 1);
            let picked: Vec<usize> = others
                .into_iter()
                .map(|i| test_stimuli[if i >= pos { i + 1 } else { i }])
                .collect();
            let (query, truth, distractors) = match mode {
                TaskMode::Encoding => (
                    ItemId::Image { stimulus: s },
                    ItemId::Response { stimulus: s, trial: t },
                    picked
                        .into_iter()
                        .map(|d| ItemId::Response {
                            stimulus: d,
                            trial: rng.random_range(0..trials),
                        })
                        .collect(),
                ),
                TaskMode::Decoding => (
                    ItemId::Response { stimulus: s, trial: t },
                    ItemId::Image { stimulus: s },
                    picked.into_iter().map(|d| ItemId::Image { stimulus: d }).collect(),
                ),
            };
            tasks.push(TaskInstance {
                id: tasks.len(),
                mode,
                query,
                truth,
                distractors,
                seed: task_seed,
            });
        }
    }
    Ok(tasks)
}

/// `(#{d < true} + ½·#{d = true}) / #distractors`.
pub fn auc_single(true_score: f64, distractor_scores: &[f64]) -> Result<f64> {
    if distractor_scores.is_empty() {
        return Err(invalid!("AUC needs at least one distractor"));
    }
    if !true_score.is_finite() || distractor_scores.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("non-finite retrieval score".into()));
    }
    let mut credit = 0.0;
    for &d in distractor_scores {
        if true_score > d {
            credit += 1.0;
        } else if true_score == d {
            credit += 0.5;
        }
    }
    Ok(credit / distractor_scores.len() as f64)
}

/// Scores candidates for a query; higher is better.
pub trait Scorer: Sync {
    fn scores(&self, mode: TaskMode, query: ItemId, candidates: &[ItemId]) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Similarity {
    Cosine,
    NegEuclidean,
}

impl Similarity {
    pub fn eval(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            Similarity::Cosine => cosine_similarity(a, b),
            Similarity::NegEuclidean => euclidean_distance(a, b).map(|d| -d),
        }
    }
}

/// Scores by comparing precomputed representations of images and of
/// responses. Each method chooses what the representations are (embeddings,
/// predicted responses, reconstructions).
#[derive(Clone, Debug)]
pub struct RepresentationScorer {
    row_of: Vec<Option<usize>>,
    trials: usize,
    images: Tensor<f64>,
    responses: Tensor<f64>,
    similarity: Similarity,
}

impl RepresentationScorer {
    /// `images` has one row per entry of `stimuli`; `responses` has
    /// `trials` consecutive rows per entry.
    pub fn new(
        stimuli: &[usize],
        trials: usize,
        images: Tensor<f64>,
        responses: Tensor<f64>,
        similarity: Similarity,
    ) -> Result<Self> {
        let (is, rs) = (images.shape(), responses.shape());
        if is.len() != 2 || rs.len() != 2 || is[1] != rs[1] || is[0] != stimuli.len() || rs[0] != stimuli.len() * trials {
            return Err(shape_err!(
                "representations {is:?} / {rs:?} do not match {} stimuli x {trials} trials",
                stimuli.len()
            ));
        }
        let mut row_of = vec![None; stimuli.iter().max().map_or(0, |m| m + 1)];
        for (row, &s) in stimuli.iter().enumerate() {
            row_of[s] = Some(row);
        }
        Ok(RepresentationScorer {
            row_of,
            trials,
            images,
            responses,
            similarity,
        })
    }

    fn vector(&self, item: ItemId) -> Result<&[f64]> {
        let row = self
            .row_of
            .get(item.stimulus())
            .copied()
            .flatten()
            .ok_or_else(|| invalid!("no representation for stimulus {}", item.stimulus()))?;
        match item {
            ItemId::Image { .. } => Ok(self.images.row(row)),
            ItemId::Response { trial, .. } if trial < self.trials => Ok(self.responses.row(row * self.trials + trial)),
            ItemId::Response { trial, .. } => Err(invalid!("trial {trial} out of range")),
        }
    }
}

impl Scorer for RepresentationScorer {
    fn scores(&self, _mode: TaskMode, query: ItemId, candidates: &[ItemId]) -> Result<Vec<f64>> {
        let q = self.vector(query)?;
        candidates
            .iter()
            .map(|&c| self.similarity.eval(q, self.vector(c)?))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: TaskMode,
    pub auc: f64,
    pub instances: usize,
    pub per_instance: Vec<f64>,
}

/// Worker count for evaluation: `CROSSALIGN_THREADS` if set and positive,
/// otherwise the number of available cores.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn score_instance(scorer: &dyn Scorer, task: &TaskInstance) -> Result<f64> {
    let scores = scorer
        .scores(task.mode, task.query, &task.candidates())
        .map_err(|e| invalid!("scoring task instance {} failed: {e}", task.id))?;
    if scores.len() != task.distractors.len() + 1 {
        return Err(invalid!(
            "scorer returned {} scores for {} candidates in task instance {}",
            scores.len(),
            task.distractors.len() + 1,
            task.id
        ));
    }
    auc_single(scores[0], &scores[1..]).map_err(|e| match e {
        Error::Numeric(m) => Error::Numeric(format!("{m} in task instance {}", task.id)),
        other => other,
    })
}

/// Per-instance AUC and their unweighted mean for tasks of one mode. Runs
/// on up to [`worker_threads`] workers; the result does not depend on the
/// worker count.
pub fn evaluate(scorer: &dyn Scorer, tasks: &[TaskInstance]) -> Result<ModeReport> {
    let mode = tasks.first().map(|t| t.mode).ok_or_else(|| invalid!("no task instances to evaluate"))?;
    if tasks.iter().any(|t| t.mode != mode) {
        return Err(invalid!("evaluate expects tasks of a single mode"));
    }
    let threads = worker_threads();
    let per_instance: Vec<f64> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| invalid!("thread pool: {e}"))?;
        pool.install(|| tasks.par_iter().map(|t| score_instance(scorer, t)).collect::<Result<_>>())?
    } else {
        tasks.iter().map(|t| score_instance(scorer, t)).collect::<Result<_>>()?
    };
    let auc = per_instance.iter().sum::<f64>() / per_instance.len() as f64;
    Ok(ModeReport {
        mode,
        auc,
        instances: per_instance.len(),
        per_instance,
    })
}

/// Column order of [`EvalReport::csv_rows`].
pub const CSV_HEADER: &str = "dataset,method,mode,K,seed,auc";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    /// Method name, or another label for the scorer (e.g. `oracle`).
    pub method: String,
    /// Requested candidate count.
    pub k: usize,
    /// Candidate count actually used after clamping to the test split.
    pub effective_k: usize,
    pub seed: u64,
    pub encoding: Option<ModeReport>,
    pub decoding: Option<ModeReport>,
    /// Arithmetic mean of the two mode AUCs, when both were evaluated.
    pub average_auc: Option<f64>,
}

/// What to evaluate: which test stimuli, how many trials each, and the
/// task parameters shared by every method.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSetup {
    pub dataset: String,
    pub test_stimuli: Vec<usize>,
    pub trials: usize,
    pub modes: Vec<TaskMode>,
    pub k: usize,
    pub seed: u64,
}

pub fn run_evaluation(scorer: &dyn Scorer, method: &str, setup: &EvalSetup) -> Result<EvalReport> {
    if setup.modes.is_empty() {
        return Err(invalid!("no task modes selected"));
    }
    let effective_k = effective_k(setup.k, setup.test_stimuli.len())?;
    let mut report = EvalReport {
        dataset: setup.dataset.clone(),
        method: method.to_string(),
        k: setup.k,
        effective_k,
        seed: setup.seed,
        encoding: None,
        decoding: None,
        average_auc: None,
    };
    for &mode in &setup.modes {
        let tasks = build_tasks(&setup.test_stimuli, setup.trials, mode, setup.k, setup.seed)?;
        let r = evaluate(scorer, &tasks)?;
        match mode {
            TaskMode::Encoding => report.encoding = Some(r),
            TaskMode::Decoding => report.decoding = Some(r),
        }
    }
    if let (Some(e), Some(d)) = (&report.encoding, &report.decoding) {
        report.average_auc = Some((e.auc + d.auc) / 2.0);
    }
    Ok(report)
}

/// One CSV row: the AUC of one method in one mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRecord {
    pub dataset: String,
    pub method: String,
    pub mode: TaskMode,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub auc: f64,
}

/// Header line plus one line per record, columns as in [`CSV_HEADER`].
pub fn write_csv(records: &[CsvRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))
            .map_err(|e| invalid!("writing csv: {e}"))?;
    }
    for r in records {
        w.serialize(r).map_err(|e| invalid!("writing csv: {e}"))?;
    }
    let bytes = w.into_inner().map_err(|e| invalid!("writing csv: {e}"))?;
    String::from_utf8(bytes).map_err(|e| invalid!("writing csv: {e}"))
}

impl EvalReport {
    pub fn modes(&self) -> impl Iterator<Item = &ModeReport> {
        self.encoding.iter().chain(self.decoding.iter())
    }

    /// One record per evaluated mode; `K` is the effective candidate count.
    pub fn csv_records(&self) -> Vec<CsvRecord> {
        self.modes()
            .map(|m| CsvRecord {
                dataset: self.dataset.clone(),
                method: self.method.clone(),
                mode: m.mode,
                k: self.effective_k,
                seed: self.seed,
                auc: m.auc,
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        write_csv(&self.csv_records())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("serialising evaluation report", e))
    }
}
