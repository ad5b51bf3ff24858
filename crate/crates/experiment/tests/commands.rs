mod common;

use std::fs;

use common::{small_config, without_timings};
use psloss::data::split;
use psloss::forecaster::{Checkpoint, DLinear, DLinearConfig, Model};
use psloss::Error;
use psloss_experiment::commands::{write_json, AblationTable, SweepTable, CHECKPOINT_FILE, RESULT_FILE, TRACE_FILE};
use psloss_experiment::config::LossMode;
use psloss_experiment::trainer::{load_dataset, TraceEntry};
use psloss_experiment::{cmd_ablate, cmd_evaluate, cmd_sweep, cmd_train, RunResult, SweepParam};

#[test]
fn train_writes_result_trace_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.out_dir = Some(dir.path().to_path_buf());
    let out = cmd_train(&cfg).unwrap();

    let text = fs::read_to_string(dir.path().join(RESULT_FILE)).unwrap();
    let back: RunResult = serde_json::from_str(&text).unwrap();
    assert_eq!(back, out.result);
    assert_eq!(back.config, cfg);

    let lines: Vec<TraceEntry> = fs::read_to_string(dir.path().join(TRACE_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines, out.result.weight_trace);
    assert!(!lines.is_empty());

    let model = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE))
        .unwrap()
        .into_model()
        .unwrap();
    assert_eq!(common::flat_params(&model), common::flat_params(&out.model));
}

#[test]
fn config_echo_reproduces_the_run() {
    let cfg = small_config();
    let first = cmd_train(&cfg).unwrap().result;
    let again = cmd_train(&first.config).unwrap().result;
    assert_eq!(without_timings(first), without_timings(again));
}

#[test]
fn evaluate_reproduces_training_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.out_dir = Some(dir.path().to_path_buf());
    let out = cmd_train(&cfg).unwrap();
    let report = cmd_evaluate(&cfg, &dir.path().join(CHECKPOINT_FILE), None).unwrap();
    assert_eq!(report, out.result.test);
}

#[test]
fn zero_model_error_is_the_target_second_moment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let ds = load_dataset(&cfg).unwrap();
    let zeros = DLinear::zeros(DLinearConfig {
        kernel_size: cfg.model.kernel_size,
        ..DLinearConfig::new(cfg.lookback, cfg.horizon, ds.channels())
    })
    .unwrap();
    let path = dir.path().join("zero.json");
    Checkpoint::from_model(&Model::DLinear(zeros)).save(&path).unwrap();
    let report = cmd_evaluate(&cfg, &path, None).unwrap();

    // normalized targets: E[y²] over every test window, summed directly
    let splits = split(&ds, cfg.data.split, cfg.lookback).unwrap();
    let (mut sum, mut n) = (0.0, 0usize);
    for w in splits.test.windows(cfg.lookback, cfg.horizon, 1) {
        sum += w.y.iter().map(|v| v * v).sum::<f64>();
        n += w.y.len();
    }
    let expected = sum / n as f64;
    assert!(
        (report.mse - expected).abs() <= 1e-12 * expected,
        "{} vs {expected}",
        report.mse
    );
}

#[test]
fn prediction_dump_has_one_row_per_window_step() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.out_dir = Some(dir.path().to_path_buf());
    cmd_train(&cfg).unwrap();
    let dump = dir.path().join("pred.csv");
    cmd_evaluate(&cfg, &dir.path().join(CHECKPOINT_FILE), Some(&dump)).unwrap();

    let ds = load_dataset(&cfg).unwrap();
    let splits = split(&ds, cfg.data.split, cfg.lookback).unwrap();
    let windows = splits.test.window_starts(cfg.lookback, cfg.horizon, 1).len();
    let mut reader = csv::Reader::from_path(&dump).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(header.len(), 2 + 2 * ds.channels());
    assert_eq!(&header[0], "window");
    assert_eq!(reader.records().count(), windows * cfg.horizon);
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.out_dir = Some(dir.path().to_path_buf());
    cmd_train(&cfg).unwrap();
    let ckpt = dir.path().join(CHECKPOINT_FILE);

    let mut other = cfg.clone();
    other.horizon = 24;
    let err = cmd_evaluate(&other, &ckpt, None).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)), "{err:?}");

    let mut wide = cfg.clone();
    if let psloss_experiment::config::DataSource::Synthetic(spec) = &mut wide.data.source {
        spec.channels = 3;
    }
    // a channel-shared head does not depend on C, so this one still evaluates
    cmd_evaluate(&wide, &ckpt, None).unwrap();
}

#[test]
fn ablation_runs_six_variants_on_one_data_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.optim.max_train_steps = Some(10);
    cfg.out_dir = Some(dir.path().to_path_buf());
    let table = cmd_ablate(&cfg).unwrap();

    let names: Vec<&str> = table.rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(
        names,
        [
            "full",
            "w/o corr",
            "w/o var",
            "w/o mean",
            "w/o patching",
            "w/o weighting"
        ]
    );
    let digest = table.rows[0].result.epochs[0].order_digest;
    for r in &table.rows {
        assert_eq!(r.result.epochs[0].order_digest, digest, "{}", r.variant);
        assert_eq!(r.result.seed, cfg.seed);
        assert_eq!(r.result.config.loss.mode, LossMode::MsePlusPs);
    }
    let no_patch = &table.rows[4].result;
    assert!(!no_patch.weight_trace.is_empty());
    for e in &no_patch.weight_trace {
        assert_eq!((e.plan.patch_length, e.plan.stride, e.plan.patch_count), (48, 48, 1));
    }
    let full = &table.rows[0].result;
    assert!(full.weight_trace.iter().all(|e| e.plan.patch_count > 1));

    let text = fs::read_to_string(dir.path().join("ablation.json")).unwrap();
    let back: AblationTable = serde_json::from_str(&text).unwrap();
    assert_eq!(back, table);
    assert_eq!(table.render().lines().count(), 7);
}

#[test]
fn lambda_sweep_has_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.out_dir = Some(dir.path().to_path_buf());
    let table = cmd_sweep(&cfg, SweepParam::Lambda, &[0.1, 1.0]).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.rows[0].value, 0.1);
    assert_ne!(table.rows[0].test, table.rows[1].test);

    let text = fs::read_to_string(dir.path().join("sweep.json")).unwrap();
    let back: SweepTable = serde_json::from_str(&text).unwrap();
    assert_eq!(back, table);
    let again = dir.path().join("again.json");
    write_json(&again, &back).unwrap();
    assert_eq!(fs::read_to_string(again).unwrap(), text);
}

#[test]
fn delta_above_the_fourier_bound_changes_nothing() {
    // P ≤ ⌊p/2⌋ ≤ ⌊T/2⌋ = 24, so every δ ≥ 24 resolves to the same plan
    let cfg = small_config();
    let table = cmd_sweep(&cfg, SweepParam::Delta, &[24.0, 36.0, 96.0]).unwrap();
    for r in &table.rows[1..] {
        assert_eq!(r.test, table.rows[0].test);
        assert_eq!(r.best_val_mse, table.rows[0].best_val_mse);
    }
}

#[test]
fn sweep_rejects_bad_values() {
    let cfg = small_config();
    assert!(matches!(
        cmd_sweep(&cfg, SweepParam::Lambda, &[]),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        cmd_sweep(&cfg, SweepParam::Delta, &[2.5]),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        cmd_sweep(&cfg, SweepParam::Lambda, &[-1.0]),
        Err(Error::Config(_))
    ));
}
