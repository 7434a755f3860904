use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use crossalign::dataio::{write_atomic, Dataset, RunConfig};
use crossalign::evaluation::{write_csv, EvalReport, EvalSetup, Method, TaskMode};
use crossalign::trainer::{evaluate_model, save_checkpoint, train};
use crossalign::{DType, Error, Scalar};
use serde::{Deserialize, Serialize};

use crate::args::CompareArgs;
use crate::commands::{eval_setup, load_prepared};

pub const COMPARE_JSON: &str = "compare.json";
pub const COMPARE_CSV: &str = "compare.csv";
pub const COMPARE_TABLE: &str = "table.txt";

/// One row of the summary table: mean AUCs of a method over all seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub encoding_auc: f64,
    pub decoding_auc: f64,
    pub average_auc: f64,
}

/// Evaluation of one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRun {
    pub train_seed: u64,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub dataset: String,
    /// Shared training configuration; `method` is overridden per run.
    pub config: RunConfig,
    pub task_seed: u64,
    pub k: usize,
    pub effective_k: usize,
    pub seeds: Vec<u64>,
    /// One run per (method, seed), methods outermost.
    pub runs: Vec<CompareRun>,
    pub summary: Vec<SummaryRow>,
}

impl CompareReport {
    pub fn to_json(&self) -> anyhow::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Evaluation CSV rows for every run; `seed` holds the training seed
    /// because the task seed is shared.
    pub fn to_csv(&self) -> anyhow::Result<String> {
        let records: Vec<_> = self
            .runs
            .iter()
            .flat_map(|run| {
                run.report.csv_records().into_iter().map(move |mut rec| {
                    rec.seed = run.train_seed;
                    rec
                })
            })
            .collect();
        Ok(write_csv(&records)?)
    }

    /// Aligned plain-text table with one row per method.
    pub fn table(&self) -> String {
        let width = self.summary.iter().map(|r| r.method.len()).chain(["Method".len()]).max().unwrap_or(6);
        let mut out = format!("{:<width$}  {:>8}  {:>8}  {:>8}\n", "Method", "Encoding", "Decoding", "Average");
        for r in &self.summary {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8.4}  {:>8.4}  {:>8.4}",
                r.method, r.encoding_auc, r.decoding_auc, r.average_auc
            );
        }
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn summarize(method: Method, runs: &[CompareRun]) -> anyhow::Result<SummaryRow> {
    let runs: Vec<&EvalReport> = runs.iter().map(|r| &r.report).collect();
    let auc = |mode: TaskMode| -> anyhow::Result<f64> {
        let aucs = runs
            .iter()
            .map(|r| match mode {
                TaskMode::Encoding => r.encoding.as_ref(),
                TaskMode::Decoding => r.decoding.as_ref(),
            })
            .map(|m| m.map(|m| m.auc).ok_or_else(|| Error::Data(format!("missing {mode} result"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(mean(aucs.into_iter()))
    };
    let encoding_auc = auc(TaskMode::Encoding)?;
    let decoding_auc = auc(TaskMode::Decoding)?;
    Ok(SummaryRow {
        method: method.to_string(),
        encoding_auc,
        decoding_auc,
        average_auc: mean(runs.iter().filter_map(|r| r.average_auc)),
    })
}

fn train_and_evaluate<T: Scalar>(
    dataset: &Dataset,
    config: &RunConfig,
    seed: u64,
    setup: &EvalSetup,
    checkpoint: Option<&Path>,
) -> anyhow::Result<EvalReport> {
    let state = train::<T>(dataset, config, seed)?;
    if let Some(path) = checkpoint {
        save_checkpoint(&state, path)?;
    }
    Ok(evaluate_model(&state.params, dataset, setup)?)
}

/// Trains every method once per seed and evaluates all of them on the same
/// task instances.
pub fn cmd_compare(args: &CompareArgs) -> anyhow::Result<CompareReport> {
    let mut config = args.run.resolve()?;
    if let Some(seeds) = &args.seeds {
        config.seeds = seeds.clone();
    }
    config.data = Some(args.data.clone());
    config.validate()?;
    if args.methods.is_empty() {
        return Err(Error::InvalidArgument("no methods to compare".into()).into());
    }
    let dataset = load_prepared(&config, &args.data)?;
    let setup = eval_setup(&dataset, TaskMode::BOTH.to_vec(), config.k, args.task_seed);
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut runs = Vec::new();
    let mut summary = Vec::new();
    for &method in &args.methods {
        let run_config = RunConfig { method, ..config.clone() };
        let mut method_runs = Vec::new();
        for &seed in &config.seeds {
            let ckpt = args
                .save_checkpoints
                .then(|| args.out.join(format!("{method}-seed{seed}.ckpt")));
            let report = match config.precision {
                DType::F32 => train_and_evaluate::<f32>(&dataset, &run_config, seed, &setup, ckpt.as_deref()),
                DType::F64 => train_and_evaluate::<f64>(&dataset, &run_config, seed, &setup, ckpt.as_deref()),
            }
            .with_context(|| format!("{method} with seed {seed}"))?;
            log::info!("{method} seed {seed}: average AUC {:?}", report.average_auc);
            method_runs.push(CompareRun { train_seed: seed, report });
        }
        summary.push(summarize(method, &method_runs)?);
        runs.extend(method_runs);
    }

    let effective_k = runs.first().map_or(config.k, |r| r.report.effective_k);
    let report = CompareReport {
        dataset: dataset.manifest.name.clone(),
        k: config.k,
        effective_k,
        task_seed: args.task_seed,
        seeds: config.seeds.clone(),
        config,
        runs,
        summary,
    };
    write_atomic(&args.out.join(COMPARE_JSON), format!("{}\n", report.to_json()?).as_bytes())?;
    write_atomic(&args.out.join(COMPARE_CSV), report.to_csv()?.as_bytes())?;
    write_atomic(&args.out.join(COMPARE_TABLE), report.table().as_bytes())?;
    Ok(report)
}
