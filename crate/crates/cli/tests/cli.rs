use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crossalign::evaluation::{Method, CSV_HEADER};
use crossalign::trainer::load_checkpoint;
use serde_json::Value;

fn crossalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossalign"))
        .args(args)
        .env_remove("CROSSALIGN_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = crossalign(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    crossalign(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("ds");
    let mut args = vec!["gen-data", "--stimuli", "20", "--neurons", "8", "--trials", "2", "--seed", "1", "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn schema_errors(schema_file: &str, doc: &Value) -> Vec<String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(schema_file);
    let schema: Value = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    validator.iter_errors(doc).map(|e| e.to_string()).collect()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["train", "--help"]), 0);
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["gen-data", "--stimuli", "10"]), 1);
}

#[test]
fn gen_data_is_deterministic_and_rejects_negative_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let stdout = ok(&["gen-data", "--stimuli", "12", "--neurons", "10", "--trials", "3", "--noise", "0.3", "--seed", "7", "--out", s(&out), "--name", "same"]).stdout;
        assert!(String::from_utf8_lossy(&stdout).contains("S=12 c=1 n=10 T=3"));
        tree_bytes(&out)
    };
    assert!(run("a") == run("b"), "gen-data output differs between identical runs");

    let bad = tmp.path().join("bad");
    assert_eq!(code(&["gen-data", "--stimuli", "10", "--neurons", "4", "--noise", "-1", "--out", s(&bad)]), 1);
    assert_eq!(code(&["gen-data", "--stimuli", "10", "--neurons", "4", "--noise", "nan", "--out", s(&bad)]), 1);
    assert_eq!(code(&["gen-data", "--stimuli", "10", "--neurons", "4", "--subsample", "5", "--out", s(&bad)]), 1);
    assert!(!bad.exists());
    ok(&["gen-data", "--stimuli", "10", "--neurons", "4", "--noise", "inf", "--out", s(&bad)]);
}

#[test]
fn train_rejects_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path(), &[]);
    let ckpt = tmp.path().join("m.ckpt");
    assert_eq!(code(&["train", "--method", "bogus", "--data", s(&data), "--out", s(&ckpt)]), 1);
    assert_eq!(code(&["train", "--data", s(&data), "--out", s(&ckpt), "--lr", "-1"]), 1);
    assert_eq!(code(&["train", "--data", s(&tmp.path().join("missing")), "--out", s(&ckpt)]), 2);
    fs::write(tmp.path().join("cfg.json"), r#"{"d": 8, "bogus": 1}"#).unwrap();
    assert_eq!(code(&["train", "--data", s(&data), "--out", s(&ckpt), "--config", s(&tmp.path().join("cfg.json"))]), 2);
    assert!(!ckpt.exists());
}

#[test]
fn train_defaults_are_echoed_in_history() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path(), &[]);
    let ckpt = tmp.path().join("m.ckpt");
    ok(&["train", "--data", s(&data), "--out", s(&ckpt), "--epochs", "1"]);
    let history = read_json(&tmp.path().join("m.ckpt.history.json"));
    let config = &history["config"];
    assert_eq!(config["method"], "vna");
    assert_eq!(config["d"], 64);
    assert_eq!(config["batch_size"], 256);
    assert_eq!(config["learning_rate"], 0.01);
    assert_eq!(history["epoch_loss"].as_array().unwrap().len(), 1);

    // the default epoch count appears when no override is given
    fs::write(tmp.path().join("cfg.json"), "{}").unwrap();
    let out = tmp.path().join("zero.ckpt");
    ok(&["train", "--data", s(&data), "--out", s(&out), "--config", s(&tmp.path().join("cfg.json")), "--epochs", "0"]);
    assert_eq!(read_json(&tmp.path().join("zero.ckpt.history.json"))["config"]["epochs"], 0);
    let defaults: crossalign::dataio::RunConfig = serde_json::from_str("{}").unwrap();
    assert_eq!(defaults.epochs, 100);
}

#[test]
fn zero_epochs_then_resume_matches_straight_training() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path(), &[]);
    let p = |n: &str| tmp.path().join(n);
    let train = |out: &str, epochs: &str| {
        let out = p(out);
        ok(&[
            "train", "--method", "direct-encode", "--batch-size", "8", "--seed", "3", "--data", s(&data), "--out", s(&out),
            "--epochs", epochs,
        ]);
    };
    train("zero.ckpt", "0");
    let history = read_json(&p("zero.ckpt.history.json"));
    assert_eq!(history["epoch_loss"].as_array().unwrap().len(), 0);

    train("two.ckpt", "2");
    train("one.ckpt", "1");
    ok(&["train", "--resume", s(&p("one.ckpt")), "--data", s(&data), "--out", s(&p("resumed.ckpt")), "--epochs", "2"]);
    let load = |n: &str| load_checkpoint::<f32>(&p(n), Some(Method::DirectEncode)).unwrap();
    let (straight, resumed) = (load("two.ckpt"), load("resumed.ckpt"));
    assert!(straight.params == resumed.params, "parameters differ after resume");
    assert!(straight.adam == resumed.adam, "optimiser state differs after resume");
    assert_eq!(straight.history.epoch_loss, resumed.history.epoch_loss);
    assert_eq!(code(&["train", "--resume", s(&p("one.ckpt")), "--method", "vna", "--data", s(&data), "--out", s(&p("x.ckpt"))]), 1);
}

#[test]
fn eval_reports_are_deterministic_and_match_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path(), &[]);
    let ckpt = tmp.path().join("m.ckpt");
    ok(&["train", "--data", s(&data), "--out", s(&ckpt), "--epochs", "1", "--d", "8", "--batch-size", "8"]);
    let p = |n: &str| tmp.path().join(n);
    let eval = |json: &str, csv: &str, threads: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_crossalign"))
            .args(["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--K", "3", "--seed", "9"])
            .args(["--json", s(&p(json)), "--csv", s(&p(csv))])
            .env("CROSSALIGN_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    eval("a.json", "a.csv", "1");
    eval("b.json", "b.csv", "3");
    assert!(fs::read(p("a.json")).unwrap() == fs::read(p("b.json")).unwrap());
    assert!(fs::read(p("a.csv")).unwrap() == fs::read(p("b.csv")).unwrap());

    let report = read_json(&p("a.json"));
    assert_eq!(schema_errors("eval_report.schema.json", &report), Vec::<String>::new());
    assert_eq!(report["method"], "vna");
    assert_eq!(report["effective_k"], 3);
    // 4 test stimuli x 2 trials per mode
    assert_eq!(report["encoding"]["instances"], 8);

    let csv = fs::read_to_string(p("a.csv")).unwrap();
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>().join(","), CSV_HEADER);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][2], "encoding");
    assert_eq!(&rows[1][2], "decoding");
}

#[test]
fn eval_minimal_k_single_mode_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path(), &[]);
    let ckpt = tmp.path().join("m.ckpt");
    ok(&["train", "--method", "direct-decode", "--data", s(&data), "--out", s(&ckpt), "--epochs", "0"]);
    let json = tmp.path().join("r.json");
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--K", "2", "--mode", "decoding", "--json", s(&json)]);
    let report = read_json(&json);
    assert_eq!(schema_errors("eval_report.schema.json", &report), Vec::<String>::new());
    assert_eq!(report["effective_k"], 2);
    assert!(report["encoding"].is_null() && report["average_auc"].is_null());

    assert_eq!(code(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--K", "1"]), 1);
    assert_eq!(code(&["eval", "--checkpoint", s(&tmp.path().join("nope")), "--data", s(&data)]), 2);
    assert_eq!(code(&["eval", "--data", s(&data)]), 1);
    fs::write(tmp.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    assert_eq!(code(&["eval", "--checkpoint", s(&tmp.path().join("junk.ckpt")), "--data", s(&data)]), 2);
    let other = tmp.path().join("other");
    ok(&["gen-data", "--stimuli", "20", "--neurons", "9", "--out", s(&other)]);
    assert_eq!(code(&["eval", "--checkpoint", s(&ckpt), "--data", s(&other)]), 2);
}

#[test]
fn oracle_scores_perfectly_on_noiseless_data() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path(), &["--noise", "0"]);
    let json = tmp.path().join("oracle.json");
    ok(&["eval", "--oracle", "--data", s(&data), "--K", "4", "--json", s(&json)]);
    let report = read_json(&json);
    assert_eq!(report["method"], "oracle");
    assert_eq!(report["encoding"]["auc"], 1.0);
    assert_eq!(report["decoding"]["auc"], 1.0);
    assert_eq!(report["average_auc"], 1.0);
}

#[test]
fn numeric_blow_up_exits_with_numeric_code() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path(), &[]);
    let ckpt = tmp.path().join("m.ckpt");
    let out = crossalign(&["train", "--method", "direct-encode", "--data", s(&data), "--out", s(&ckpt), "--epochs", "5", "--batch-size", "8", "--lr", "1e30"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!ckpt.exists());
}

#[test]
fn compare_writes_schema_valid_report_csv_and_table() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path(), &[]);
    let out = tmp.path().join("cmp");
    let stdout = ok(&[
        "compare", "--data", s(&data), "--out", s(&out), "--epochs", "1", "--d", "8", "--batch-size", "8", "--K", "3",
        "--save-checkpoints",
    ])
    .stdout;
    let report = read_json(&out.join("compare.json"));
    assert_eq!(schema_errors("compare_report.schema.json", &report), Vec::<String>::new());
    let methods: Vec<&str> = report["summary"].as_array().unwrap().iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["vna", "direct-encode", "direct-decode"]);

    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(csv.lines().count() - 1, 3 * 2);

    let table = fs::read_to_string(out.join("table.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&stdout), table);
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["Method", "Encoding", "Decoding", "Average"]);
    assert_eq!(table.lines().count(), 4);

    for m in methods {
        let ckpt = out.join(format!("{m}-seed0.ckpt"));
        let json = tmp.path().join(format!("{m}.json"));
        ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--K", "3", "--json", s(&json)]);
        let run = report["runs"].as_array().unwrap().iter().find(|r| r["report"]["method"] == m).unwrap();
        assert_eq!(run["report"], read_json(&json));
    }
}
