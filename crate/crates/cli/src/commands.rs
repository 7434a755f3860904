use std::path::{Path, PathBuf};

use anyhow::Context;
use crossalign::dataio::{read_dataset, write_atomic, write_dataset, write_json, Dataset, RunConfig};
use crossalign::evaluation::{run_evaluation, EvalReport, EvalSetup, Scorer, TaskMode};
use crossalign::synthdata::{generate, SyntheticDatasetSpec};
use crossalign::trainer::{
    load_checkpoint, model_scorer, oracle_scorer, read_checkpoint_meta, save_checkpoint, train, train_until,
    TrainHistory, TrainState,
};
use crossalign::{DType, Error, Scalar};

use crate::args::{EvalArgs, GenDataArgs, TrainArgs};

pub(crate) fn dataset_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .filter(|n| !n.is_empty())
        .unwrap_or_else(|| "dataset".into())
}

pub(crate) fn load_prepared(config: &RunConfig, dir: &Path) -> anyhow::Result<Dataset> {
    let raw = read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()))?;
    config
        .prepare(raw)
        .with_context(|| format!("applying run overrides to {}", dir.display()))
}

pub(crate) fn eval_setup(dataset: &Dataset, modes: Vec<TaskMode>, k: usize, seed: u64) -> EvalSetup {
    EvalSetup {
        dataset: dataset.manifest.name.clone(),
        test_stimuli: dataset.splits.test.clone(),
        trials: dataset.manifest.trials,
        modes,
        k,
        seed,
    }
}

pub fn cmd_gen_data(args: &GenDataArgs) -> anyhow::Result<Dataset> {
    let spec = SyntheticDatasetSpec {
        stimuli: args.stimuli,
        channels: args.channels,
        neurons: args.neurons,
        trials: args.trials,
        noise: args.noise,
        seed: args.seed,
    };
    let name = args.name.clone().unwrap_or_else(|| dataset_name(&args.out));
    let mut dataset = Dataset::from_synthetic(name, generate(&spec)?, args.test_fraction)?;
    if let Some(m) = args.subsample {
        dataset = dataset.subsample(m, args.subsample_seed)?;
    }
    write_dataset(&dataset, &args.out).with_context(|| format!("writing dataset to {}", args.out.display()))?;
    Ok(dataset)
}

fn history_path(args: &TrainArgs) -> PathBuf {
    args.history.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".history.json");
        PathBuf::from(p)
    })
}

fn train_and_save<T: Scalar>(
    args: &TrainArgs,
    config: &RunConfig,
    resume: Option<TrainState<T>>,
) -> anyhow::Result<TrainHistory> {
    let dataset = load_prepared(config, &args.data)?;
    let state = match resume {
        Some(mut state) => {
            state.history.config.epochs = config.epochs;
            train_until(&mut state, &dataset, config.epochs)?;
            state
        }
        None => train::<T>(&dataset, config, config.seeds[0])?,
    };
    save_checkpoint(&state, &args.out).with_context(|| format!("writing checkpoint {}", args.out.display()))?;
    write_json(&history_path(args), &state.history)?;
    Ok(state.history)
}

pub fn cmd_train(args: &TrainArgs) -> anyhow::Result<TrainHistory> {
    let history = if let Some(path) = &args.resume {
        let meta = read_checkpoint_meta(path)?;
        let mut config = meta.history.config.clone();
        if let Some(m) = args.method {
            if m != meta.method {
                return Err(Error::InvalidArgument(format!("{} holds a {} model, not {m}", path.display(), meta.method)).into());
            }
        }
        if let Some(e) = args.run.epochs {
            config.epochs = e;
        }
        match meta.dtype {
            DType::F32 => train_and_save(args, &config, Some(load_checkpoint::<f32>(path, Some(meta.method))?))?,
            DType::F64 => train_and_save(args, &config, Some(load_checkpoint::<f64>(path, Some(meta.method))?))?,
        }
    } else {
        let mut config = args.run.resolve()?;
        if let Some(m) = args.method {
            config.method = m;
        }
        if let Some(s) = args.seed {
            config.seeds = vec![s];
        }
        config.data = Some(args.data.clone());
        config.validate()?;
        match config.precision {
            DType::F32 => train_and_save::<f32>(args, &config, None)?,
            DType::F64 => train_and_save::<f64>(args, &config, None)?,
        }
    };
    Ok(history)
}

fn eval_checkpoint<T: Scalar>(path: &Path, dataset: &Dataset) -> anyhow::Result<Box<dyn Scorer>> {
    let state = load_checkpoint::<T>(path, None)?;
    let spec = &state.params.spec;
    if spec.channels != dataset.manifest.channels || spec.neurons != dataset.manifest.neurons {
        return Err(Error::Data(format!(
            "checkpoint expects c={} n={}, dataset has c={} n={}",
            spec.channels, spec.neurons, dataset.manifest.channels, dataset.manifest.neurons
        ))
        .into());
    }
    Ok(Box::new(model_scorer(&state.params, dataset)?))
}

pub fn cmd_eval(args: &EvalArgs) -> anyhow::Result<EvalReport> {
    let meta = args.checkpoint.as_deref().map(read_checkpoint_meta).transpose()?;
    let config = meta.as_ref().map(|m| m.history.config.clone()).unwrap_or_default();
    let dataset = load_prepared(&config, &args.data)?;
    let (scorer, label): (Box<dyn Scorer>, String) = match (&meta, &args.checkpoint) {
        _ if args.oracle => (Box::new(oracle_scorer(&dataset)?), "oracle".into()),
        (Some(meta), Some(path)) => {
            let scorer = match meta.dtype {
                DType::F32 => eval_checkpoint::<f32>(path, &dataset)?,
                DType::F64 => eval_checkpoint::<f64>(path, &dataset)?,
            };
            (scorer, meta.method.to_string())
        }
        _ => return Err(Error::InvalidArgument("--checkpoint is required".into()).into()),
    };
    let setup = eval_setup(&dataset, args.mode.modes(), args.k, args.seed);
    let report = run_evaluation(scorer.as_ref(), &label, &setup)?;
    if let Some(p) = &args.json {
        write_atomic(p, format!("{}\n", report.to_json()?).as_bytes())?;
    }
    if let Some(p) = &args.csv {
        write_atomic(p, report.to_csv()?.as_bytes())?;
    }
    Ok(report)
}

pub(crate) fn gen_data_summary(args: &GenDataArgs, dataset: &Dataset) -> String {
    let m = &dataset.manifest;
    format!(
        "wrote {}: S={} c={} n={} T={} noise={} ({} train / {} test stimuli)",
        args.out.display(),
        m.stimuli,
        m.channels,
        m.neurons,
        m.trials,
        serde_json::to_string(&args.noise).unwrap_or_default(),
        dataset.splits.train.len(),
        dataset.splits.test.len()
    )
}

pub(crate) fn train_summary(args: &TrainArgs, history: &TrainHistory) -> String {
    let c = &history.config;
    format!(
        "trained {} for {} epochs (seed {}, d={}, N={}, lr={}): final loss {}; checkpoint {}",
        history.method,
        history.epochs(),
        history.seed,
        c.d,
        history.batch_size,
        c.learning_rate,
        history.epoch_loss.last().map_or("n/a".into(), |l| format!("{l:.6}")),
        args.out.display()
    )
}

pub(crate) fn eval_summary(report: &EvalReport) -> String {
    let mut lines: Vec<String> = report
        .modes()
        .map(|m| format!("{} {} AUC {:.4} ({} tasks, K={})", report.method, m.mode, m.auc, m.instances, report.effective_k))
        .collect();
    if let Some(avg) = report.average_auc {
        lines.push(format!("{} average AUC {avg:.4}", report.method));
    }
    lines.join("\n")
}
