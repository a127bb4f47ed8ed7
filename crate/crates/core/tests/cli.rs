use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qgcn::data::{load_split, SplitRatios};
use qgcn::experiment::{cmd_prepare, RunConfig, CONFIG_FILE, METRICS_CSV, RUN_FILE};
use qgcn::model::Variant;

fn qgcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qgcn"))
        .args(args)
        .env_clear()
        .output()
        .expect("binary runs")
}

fn toy_file(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("toy.txt");
    let lines = [
        "10 1 2 3 4 5",
        "11 2 3 4",
        "12 1 5 6 7",
        "13 3 6",
        "14 7 1 2 4 6",
    ];
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

#[test]
fn prepare_toy_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = toy_file(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let m = cmd_prepare(&input, &a, 0, SplitRatios::default(), 3).unwrap();
    assert_eq!((m.users, m.items), (5, 7));
    cmd_prepare(&input, &b, 0, SplitRatios::default(), 3).unwrap();
    for f in ["train.txt", "val.txt", "test.txt", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (split, manifest) = load_split(&a).unwrap();
    assert_eq!(manifest, m);
    assert_eq!(
        split.train.edge_count() + split.validation.edge_count() + split.test.edge_count(),
        19
    );
}

#[test]
fn prepare_reports_an_empty_core() {
    let dir = tempfile::tempdir().unwrap();
    let input = toy_file(dir.path());
    let out = qgcn(&[
        "prepare",
        "--input",
        input.to_str().unwrap(),
        "--out",
        dir.path().join("p").to_str().unwrap(),
        "--kcore",
        "10",
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("empty"), "{err}");
}

fn prepared(dir: &Path) -> String {
    let data = dir.join("data");
    let out = qgcn(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--users",
        "40",
        "--items",
        "30",
        "--clusters",
        "3",
        "--per-user",
        "6",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data.to_str().unwrap().to_string()
}

#[test]
fn zero_epochs_write_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let data = prepared(dir.path());
    let run = dir.path().join("run");
    let out = qgcn(&[
        "train",
        "--dataset",
        &data,
        "--epochs",
        "0",
        "--embed-dim",
        "8",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read_to_string(run.join(METRICS_CSV)).unwrap(),
        "epoch,loss,split,recall@20,ndcg@20\n"
    );
    assert!(run.join("checkpoint.json").exists());
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join(RUN_FILE)).unwrap()).unwrap();
    assert_eq!(record["manifest_sha256"].as_str().unwrap().len(), 64);
    assert!(record["seeds"]["init"].is_u64());
}

#[test]
fn lightgcn_flags_and_env_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let data = prepared(dir.path());
    let run = dir.path().join("run");
    let out = Command::new(env!("CARGO_BIN_EXE_qgcn"))
        .args([
            "train",
            "--dataset",
            &data,
            "--variant",
            "lightgcn",
            "--layers",
            "3",
            "--embed-dim",
            "8",
            "--out",
            run.to_str().unwrap(),
        ])
        .env_clear()
        .env("QGCN_EPOCHS", "3")
        .env("QGCN_EVAL_INTERVAL", "1")
        .env("QGCN_LR", "0.01")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg: RunConfig = serde_json::from_str(&fs::read_to_string(run.join(CONFIG_FILE)).unwrap()).unwrap();
    assert_eq!(cfg.model.variant, Variant::Lightgcn);
    assert_eq!(cfg.model.layers, 3);
    assert_eq!(cfg.model.quaternion_dim, 2);
    assert_eq!(cfg.train.epochs, 3);
    let metrics = fs::read_to_string(run.join(METRICS_CSV)).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 3);

    let eval_out = dir.path().join("eval");
    let out = qgcn(&[
        "eval",
        "--checkpoint",
        run.join("checkpoint.json").to_str().unwrap(),
        "--dataset",
        &data,
        "--topk",
        "5,20",
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(eval_out.join("metrics.json").exists());
}

#[test]
fn invalid_input_exits_non_zero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = qgcn(&["train", "--dataset", missing.to_str().unwrap(), "--out", "x"]);
    assert!(!out.status.success());
    let data = prepared(dir.path());
    let out = qgcn(&["train", "--dataset", &data, "--embed-dim", "10", "--out", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("multiple of 4"));
}
