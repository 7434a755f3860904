use super::*;
use crate::dataio::Dataset;
use crate::evaluation::TaskMode;
use crate::synthdata::{generate, NoiseModel, SyntheticDatasetSpec};

fn dataset(stimuli: usize, trials: usize, sigma: f64) -> Dataset {
    let spec = SyntheticDatasetSpec {
        stimuli,
        channels: 1,
        neurons: 8,
        trials,
        noise: NoiseModel::Gaussian { sigma },
        seed: 11,
    };
    Dataset::from_synthetic("unit", generate(&spec).unwrap(), 0.25).unwrap()
}

fn config(method: Method, epochs: usize) -> RunConfig {
    RunConfig {
        method,
        d: 8,
        batch_size: 6,
        epochs,
        k: 4,
        ..RunConfig::default()
    }
}

#[test]
fn zero_epochs_return_initial_params() {
    let ds = dataset(12, 1, 0.0);
    for method in Method::ALL {
        let cfg = config(method, 0);
        let state = train::<f64>(&ds, &cfg, 3).unwrap();
        let init = ModelParams::<f64>::init(model_spec(&ds, &cfg), 3).unwrap();
        assert_eq!(state.params, init);
        assert_eq!(state.history.epochs(), 0);
        assert_eq!(state.adam.step, 0);
    }
}

#[test]
fn training_is_deterministic_and_learns() {
    let ds = dataset(12, 2, 0.2);
    for method in Method::ALL {
        let cfg = config(method, 4);
        let a = train::<f64>(&ds, &cfg, 5).unwrap();
        let b = train::<f64>(&ds, &cfg, 5).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history.epoch_loss, b.history.epoch_loss);
        assert_eq!(a.history.epochs(), 4);
        assert!(a.history.epoch_loss.iter().all(|l| l.is_finite()));
        let (first, last) = (a.history.epoch_loss[0], a.history.epoch_loss[3]);
        assert!(last < first, "{method}: {first} -> {last}");
        let c = train::<f64>(&ds, &cfg, 6).unwrap();
        assert_ne!(a.params, c.params);
    }
}

#[test]
fn batch_policy() {
    let ds = dataset(12, 1, 0.0);
    // 9 training examples: the alignment model runs one batch of 6 per epoch,
    // the baselines also train on the tail of 3.
    let vna = train::<f64>(&ds, &config(Method::Vna, 2), 0).unwrap();
    assert_eq!(vna.adam.step, 2);
    let de = train::<f64>(&ds, &config(Method::DirectEncode, 2), 0).unwrap();
    assert_eq!(de.adam.step, 4);
    let clamp = train::<f64>(&ds, &RunConfig { batch_size: 256, ..config(Method::Vna, 1) }, 0).unwrap();
    assert_eq!(clamp.history.batch_size, 9);
    assert_eq!(clamp.adam.step, 1);
    // A one-example tail cannot be batch-normalised and is skipped.
    let tail = train::<f64>(&ds, &RunConfig { batch_size: 4, ..config(Method::DirectDecode, 1) }, 0).unwrap();
    assert_eq!(tail.adam.step, 2);
}

#[test]
fn checkpoint_round_trip_and_resume() {
    let ds = dataset(12, 1, 0.1);
    let dir = tempfile::tempdir().unwrap();
    for method in Method::ALL {
        let cfg = config(method, 3);
        let straight = train::<f64>(&ds, &cfg, 9).unwrap();
        let path = dir.path().join(format!("{method}.ckpt"));
        save_checkpoint(&straight, &path).unwrap();
        let back = load_checkpoint::<f64>(&path, Some(method)).unwrap();
        assert_eq!(back, straight);

        let mut partial = train::<f64>(&ds, &RunConfig { epochs: 1, ..cfg.clone() }, 9).unwrap();
        save_checkpoint(&partial, &path).unwrap();
        partial = load_checkpoint(&path, None).unwrap();
        train_until(&mut partial, &ds, 3).unwrap();
        assert_eq!(partial.params, straight.params);
        assert_eq!(partial.adam, straight.adam);
        assert_eq!(partial.history.epoch_loss, straight.history.epoch_loss);
    }
}

#[test]
fn checkpoint_rejections() {
    let ds = dataset(12, 1, 0.1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vna.ckpt");
    let state = train::<f32>(&ds, &config(Method::Vna, 1), 0).unwrap();
    save_checkpoint(&state, &path).unwrap();
    assert_eq!(read_checkpoint_meta(&path).unwrap().dtype, crate::DType::F32);
    let err = load_checkpoint::<f32>(&path, Some(Method::DirectEncode)).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(ref m) if m.contains("vna")), "{err}");
    assert!(load_checkpoint::<f64>(&path, None).is_err());

    let mut bytes = std::fs::read(&path).unwrap();
    let key = b"\"schema_version\":1";
    let at = bytes.windows(key.len()).position(|w| w == key).unwrap();
    bytes[at + key.len() - 1] = b'7';
    std::fs::write(&path, &bytes).unwrap();
    let err = load_checkpoint::<f32>(&path, None).unwrap_err().to_string();
    assert!(err.contains("version 7"), "{err}");

    bytes.truncate(bytes.len() - 1);
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint::<f32>(&path, None).is_err());
    std::fs::write(&path, b"garbage").unwrap();
    assert!(load_checkpoint::<f32>(&path, None).is_err());
}

#[test]
fn epoch_order_depends_only_on_seed_and_epoch() {
    use rand::seq::SliceRandom;
    let ds = dataset(12, 2, 0.0);
    let data = TrainData::<f64>::new(&ds).unwrap();
    let order = |seed: u64, e: u64| {
        let mut o = data.examples();
        o.shuffle(&mut derived_rng(seed, &[stream::EPOCH, e]));
        o
    };
    assert_eq!(order(1, 3), order(1, 3));
    assert_ne!(order(1, 3), order(1, 4));
    assert_ne!(order(1, 3), order(2, 3));
}

#[test]
fn oracle_is_perfect_on_noiseless_data() {
    let ds = dataset(20, 2, 0.0);
    let setup = EvalSetup {
        dataset: "unit".into(),
        test_stimuli: ds.splits.test.clone(),
        trials: 2,
        modes: TaskMode::BOTH.to_vec(),
        k: 400,
        seed: 0,
    };
    let r = run_evaluation(&oracle_scorer(&ds).unwrap(), "oracle", &setup).unwrap();
    assert_eq!(r.average_auc, Some(1.0));
}

#[test]
fn model_scorers_cover_the_test_split() {
    let ds = dataset(16, 2, 0.3);
    let setup = EvalSetup {
        dataset: "unit".into(),
        test_stimuli: ds.splits.test.clone(),
        trials: 2,
        modes: TaskMode::BOTH.to_vec(),
        k: 3,
        seed: 1,
    };
    for method in Method::ALL {
        let state = train::<f32>(&ds, &config(method, 1), 2).unwrap();
        let a = evaluate_model(&state.params, &ds, &setup).unwrap();
        let b = evaluate_model(&state.params, &ds, &setup).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.encoding.as_ref().unwrap().instances, ds.splits.test.len() * 2);
        assert!(a.modes().all(|m| (0.0..=1.0).contains(&m.auc)));
    }
}
