use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn rfi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfi")).args(args).output().expect("run rfi")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Small, fast training config for smoke tests.
fn quick_config(dir: &Path, epochs: usize) -> PathBuf {
    let p = dir.join("quick.json");
    let cfg = serde_json::json!({
        "batch_size": 16, "max_epochs": epochs, "patience": 3, "learning_rate": 0.003,
        "num_filters": 8, "hidden_size": 4, "merge_train_val": false
    });
    std::fs::write(&p, cfg.to_string()).unwrap();
    p
}

fn synth(dir: &Path, scale: &str, seed: &str) -> PathBuf {
    let out = dir.join(format!("data_{scale}_{seed}.jsonl"));
    let o = rfi(&["synth", "--scale", scale, "--seed", seed, "--out", &s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn synth_scaled_counts_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(tmp.path(), "0.01", "5");
    let text = std::fs::read_to_string(&a).unwrap();
    // floor(0.01 * counts) with a minimum of 3.
    assert_eq!(text.lines().count(), 6 + 5 + 55 + 3 + 160 + 359 + 36 + 5);
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["class"], 1);
    let b = tmp.path().join("again.jsonl");
    assert!(rfi(&["synth", "--scale", "0.01", "--seed", "5", "--out", &s(&b)]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn synth_rejects_bad_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"scale": 0.01, "colour": "red"}"#).unwrap();
    let o = rfi(&["synth", "--config", &s(&cfg), "--out", &s(&tmp.path().join("x.jsonl"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn split_and_preprocess() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "0.01", "1");
    let split = tmp.path().join("split");
    let o = rfi(&["split", "--input", &s(&data), "--seed", "2", "--out-dir", &s(&split)]);
    assert!(o.status.success());
    let lines = |n: &str| std::fs::read_to_string(split.join(n)).unwrap().lines().count();
    assert_eq!(lines("train.jsonl") + lines("validation.jsonl") + lines("test.jsonl"), 629);
    let manifest = read_json(&split.join("manifest.json"));
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let pre = tmp.path().join("pre");
    let o = rfi(&[
        "preprocess", "--train", &s(&split.join("train.jsonl")), "--apply", &s(&split.join("test.jsonl")),
        "--length", "1000", "--anchor", "50", "--out-dir", &s(&pre),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let st = read_json(&pre.join("standardizer.json"));
    assert_eq!(st["T"], 1000);
    assert_eq!(st["mu"].as_array().unwrap().len(), 1000);
    let first = std::fs::read_to_string(pre.join("test.std.jsonl")).unwrap();
    let v: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(v["samples"].as_array().unwrap().len(), 1000);
}

#[test]
fn train_missing_dataset_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rfi(&["train", "--data", &s(&tmp.path().join("nope.jsonl")), "--out-dir", &s(tmp.path())]);
    assert_eq!(code(&o), 3);
}

#[test]
fn train_rejects_bad_override() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "0.01", "1");
    let o = rfi(&["train", "--data", &s(&data), "--out-dir", &s(tmp.path()), "--kernel-len", "9000"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_evaluate_and_dump_filters() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "0.02", "3");
    let cfg = quick_config(tmp.path(), 4);
    let run = tmp.path().join("run");
    let o = rfi(&[
        "train", "--config", &s(&cfg), "--data", &s(&data), "--imbalance-mode", "downsample",
        "--seed", "3", "--deterministic", "--out-dir", &s(&run),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&run.join("report.json"));
    assert!(report["final_val_accuracy"].is_number());
    assert_eq!(report["train"]["imbalance_mode"], "downsample");
    for name in ["checkpoint.json", "standardizer.json", "metrics.json", "confusion.csv", "test.jsonl", "manifest.json"] {
        assert!(run.join(name).exists(), "{name}");
    }

    let eval = tmp.path().join("eval");
    let o = rfi(&[
        "evaluate", "--checkpoint", &s(&run.join("checkpoint.json")), "--test", &s(&run.join("test.jsonl")),
        "--standardizer", &s(&run.join("standardizer.json")), "--out-dir", &s(&eval),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // Evaluating the saved artifacts reproduces the metrics written by `train`.
    assert_eq!(read_json(&eval.join("metrics.json")), read_json(&run.join("metrics.json")));

    let csv = tmp.path().join("filters.csv");
    assert!(rfi(&["filters-dump", "--checkpoint", &s(&run.join("checkpoint.json")), "--out", &s(&csv)]).status.success());
    let rows: Vec<Vec<f64>> = std::fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.len() == 160));
    let ck = read_json(&run.join("checkpoint.json"));
    let filters = ck["tensors"].as_array().unwrap().iter().find(|t| t["name"] == "conv.filters").unwrap();
    let stored: Vec<f64> = filters["data"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let dumped: Vec<f64> = rows.concat();
    assert!(stored.iter().zip(&dumped).all(|(a, b)| (a - b).abs() <= 1e-15));
}

#[test]
fn untrained_checkpoint_dumps_initial_filters() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "0.02", "4");
    let cfg = quick_config(tmp.path(), 0);
    let run = tmp.path().join("run");
    let o = rfi(&["train", "--config", &s(&cfg), "--data", &s(&data), "--seed", "11", "--out-dir", &s(&run)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mc = rfi_core::nn::ModelConfig {
        num_filters: 8,
        hidden: 4,
        ..rfi_core::nn::ModelConfig::default()
    };
    let init = rfi_core::ModelParams::init(&mc, 11).unwrap();
    let csv = tmp.path().join("f.csv");
    assert!(rfi(&["filters-dump", "--checkpoint", &s(&run.join("checkpoint.json")), "--out", &s(&csv)]).status.success());
    let dumped: Vec<f64> = std::fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .flat_map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect();
    assert_eq!(dumped, init.conv.filters.data);
}

#[test]
fn filters_dump_missing_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rfi(&["filters-dump", "--checkpoint", &s(&tmp.path().join("none.json")), "--out", &s(&tmp.path().join("f.csv"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn evaluate_from_predictions_oracle() {
    let rows: [[u64; 8]; 8] = [
        [44, 0, 2, 0, 2, 0, 2, 2],
        [2, 38, 1, 1, 0, 1, 0, 9],
        [3, 0, 36, 1, 0, 4, 1, 7],
        [2, 0, 0, 49, 0, 1, 0, 0],
        [4, 0, 0, 1, 45, 1, 1, 0],
        [1, 0, 4, 0, 0, 47, 0, 0],
        [1, 0, 0, 1, 1, 1, 48, 0],
        [1, 3, 3, 1, 0, 1, 0, 43],
    ];
    let mut csv = String::from("true,predicted\n");
    for (i, r) in rows.iter().enumerate() {
        for (j, &n) in r.iter().enumerate() {
            for _ in 0..n {
                csv.push_str(&format!("{},{}\n", i + 1, j + 1));
            }
        }
    }
    let tmp = tempfile::tempdir().unwrap();
    let preds = tmp.path().join("preds.csv");
    std::fs::write(&preds, csv).unwrap();
    let out = tmp.path().join("eval");
    let o = rfi(&["evaluate", "--from-predictions", &s(&preds), "--out-dir", &s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&out.join("metrics.json"));
    for (key, want) in [("accuracy", 0.8413), ("precision", 0.8475), ("recall", 0.8413)] {
        assert!((m[key].as_f64().unwrap() - want).abs() < 5e-5, "{key}");
    }
    let confusion = std::fs::read_to_string(out.join("confusion.csv")).unwrap();
    assert_eq!(confusion.lines().count(), 9);
}

#[test]
fn evaluate_empty_test_set() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.csv");
    std::fs::write(&empty, "true,predicted\n").unwrap();
    let o = rfi(&["evaluate", "--from-predictions", &s(&empty), "--out-dir", &s(&tmp.path().join("e"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn evaluate_length_mismatch_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "0.02", "6");
    let run = tmp.path().join("run");
    let cfg = quick_config(tmp.path(), 0);
    assert!(rfi(&["train", "--config", &s(&cfg), "--data", &s(&data), "--out-dir", &s(&run)]).status.success());
    let split = tmp.path().join("split");
    assert!(rfi(&["split", "--input", &s(&data), "--out-dir", &s(&split)]).status.success());
    let pre = tmp.path().join("pre");
    let o = rfi(&["preprocess", "--train", &s(&split.join("train.jsonl")), "--length", "4000", "--out-dir", &s(&pre)]);
    assert!(o.status.success());
    let o = rfi(&[
        "evaluate", "--checkpoint", &s(&run.join("checkpoint.json")), "--test", &s(&run.join("test.jsonl")),
        "--standardizer", &s(&pre.join("standardizer.json")), "--out-dir", &s(&tmp.path().join("e")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_passes_and_detects_mutation() {
    let o = rfi(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report: Value = serde_json::from_str(String::from_utf8_lossy(&o.stdout).lines().next().unwrap()).unwrap();
    assert!(report["max_rel_error"].as_f64().unwrap() < 1e-4);

    assert_eq!(code(&rfi(&["gradcheck", "--mutate", "conv_bias"])), 1);

    let o = rfi(&["gradcheck", "--eps", "1e-5", "--samples", "200"]);
    assert_eq!(code(&o), 0);
    let report: Value = serde_json::from_str(String::from_utf8_lossy(&o.stdout).lines().next().unwrap()).unwrap();
    assert_eq!(report["checked"], 200);
}
