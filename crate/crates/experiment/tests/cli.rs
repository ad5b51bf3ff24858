mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::small_config;
use psloss_experiment::config::ExperimentConfig;
use psloss_experiment::RunResult;

fn psloss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psloss"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, small_config().to_toml()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn defaults_print_a_loadable_config() {
    let out = psloss(&["defaults"]);
    assert!(out.status.success());
    let cfg: ExperimentConfig = toml::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let run = dir.path().join("run");
    let run_s = run.to_string_lossy();

    let out = psloss(&["train", "--config", &config, "--seed", "3", "--out", &run_s]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let result: RunResult = serde_json::from_slice(&fs::read(run.join("result.json")).unwrap()).unwrap();
    assert_eq!(result.seed, 3);
    assert!(run.join("weights_trace.jsonl").exists());

    let eval = dir.path().join("eval");
    let ckpt = run.join("checkpoint.json");
    let out = psloss(&[
        "evaluate",
        "--config",
        &config,
        "--checkpoint",
        &ckpt.to_string_lossy(),
        "--predictions",
        "--out",
        &eval.to_string_lossy(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed["mse"].as_f64().unwrap(), result.test.mse);
    assert!(eval.join("predictions.csv").exists());
    assert!(eval.join("metrics.json").exists());
}

#[test]
fn sweep_prints_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = psloss(&["sweep", "--config", &config, "--param", "lambda", "--values", "0.5,2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("lambda"));
}

#[test]
fn predictions_need_an_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = psloss(&[
        "evaluate",
        "--config",
        &config,
        "--checkpoint",
        "x.json",
        "--predictions",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--predictions needs --out"));
}

#[test]
fn missing_dataset_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(
        &path,
        "lookback = 48\nhorizon = 24\n[data.source]\nkind = \"csv\"\npath = \"nope.csv\"\n",
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_psloss"))
        .args(["train", "--config", &path.to_string_lossy()])
        .env("PSLOSS_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.csv"), "{err}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.toml");
    fs::write(&path, "[loss]\nlamda = 2.0\n").unwrap();
    let out = psloss(&["train", "--config", &path.to_string_lossy()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));
}
