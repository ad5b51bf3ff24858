//! `train`, `evaluate`, `ablate` and `sweep`, plus their result files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::info;
use psloss::data::split;
use psloss::forecaster::{Checkpoint, Forecaster};
use psloss::metrics::{evaluate, MetricsReport};
use psloss::{Error, Result, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{Ablation, ExperimentConfig, LossMode};
use crate::trainer::{load_dataset, predict_view, RunResult, TrainOutcome, Trainer};

pub const RESULT_FILE: &str = "result.json";
pub const TRACE_FILE: &str = "weights_trace.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

fn json_err(e: serde_json::Error) -> Error {
    Error::Config(format!("serialization failed: {e}"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(json_err)?;
    fs::write(path, text)?;
    Ok(())
}

/// Trains and, when the config names an output directory, writes the
/// result, weight trace and checkpoint there.
pub fn cmd_train(config: &ExperimentConfig) -> Result<TrainOutcome> {
    let outcome = Trainer::new(config.clone())?.run()?;
    if let Some(dir) = &config.out_dir {
        write_run(dir, &outcome)?;
    }
    Ok(outcome)
}

pub fn write_run(dir: &Path, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(RESULT_FILE), &outcome.result)?;
    let mut trace = BufWriter::new(File::create(dir.join(TRACE_FILE))?);
    for entry in &outcome.result.weight_trace {
        serde_json::to_writer(&mut trace, entry).map_err(json_err)?;
        trace.write_all(b"\n")?;
    }
    trace.flush()?;
    Checkpoint::from_model(&outcome.model).save(&dir.join(CHECKPOINT_FILE))
}

/// Test-set metrics of a saved model. With `dump`, also writes one CSV row
/// per `(window, step)` holding truth and prediction for every channel.
pub fn cmd_evaluate(config: &ExperimentConfig, checkpoint: &Path, dump: Option<&Path>) -> Result<MetricsReport> {
    config.validate()?;
    let model = Checkpoint::load(checkpoint)?.into_model()?;
    if model.lookback() != config.lookback || model.horizon() != config.horizon {
        return Err(Error::Checkpoint(format!(
            "checkpoint maps {} → {} steps, config expects {} → {}",
            model.lookback(),
            model.horizon(),
            config.lookback,
            config.horizon
        )));
    }
    let ds = load_dataset(config)?;
    let splits = split(&ds, config.data.split, config.lookback)?;
    let (truth, pred) = predict_view(&model, &splits.test).map_err(|e| match e {
        Error::Shape(m) => Error::Checkpoint(m),
        other => other,
    })?;
    if let Some(path) = dump {
        write_predictions(path, &ds.channel_names, &truth, &pred)?;
    }
    evaluate(&truth, &pred)
}

pub fn write_predictions(path: &Path, channels: &[String], truth: &Tensor, pred: &Tensor) -> Result<()> {
    let (w, c, t) = (truth.shape()[0], truth.shape()[1], truth.shape()[2]);
    let io = |e: csv::Error| Error::Io(e.into());
    let mut out = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["window".to_string(), "step".to_string()];
    for name in channels {
        header.push(format!("{name}_true"));
        header.push(format!("{name}_pred"));
    }
    out.write_record(&header).map_err(io)?;
    let mut row = Vec::with_capacity(header.len());
    for wi in 0..w {
        for s in 0..t {
            row.clear();
            row.push(wi.to_string());
            row.push(s.to_string());
            for ci in 0..c {
                let k = (wi * c + ci) * t + s;
                row.push(truth.values()[k].to_string());
                row.push(pred.values()[k].to_string());
            }
            out.write_record(&row).map_err(io)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub result: RunResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn render(&self) -> String {
        let mut s = format!("{:<16}{:>10}{:>10}{:>10}\n", "variant", "mse", "mae", "pcc");
        for r in &self.rows {
            let t = &r.result.test;
            s += &format!("{:<16}{:>10.4}{:>10.4}{:>10.4}\n", r.variant, t.mse, t.mae, t.pcc_mean);
        }
        s
    }
}

/// The full structural loss and its five single-component ablations, all
/// with the config's seed.
pub fn cmd_ablate(config: &ExperimentConfig) -> Result<AblationTable> {
    let ds = load_dataset(config)?;
    let mut rows = Vec::new();
    for (name, ablation) in Ablation::variants() {
        let mut cfg = config.clone();
        cfg.loss.mode = LossMode::MsePlusPs;
        cfg.loss.ablation = ablation;
        cfg.out_dir = config.out_dir.as_ref().map(|d| d.join(name.replace(['/', ' '], "_")));
        info!("ablation variant {name}");
        let outcome = Trainer::with_dataset(cfg.clone(), &ds)?.run()?;
        if let Some(dir) = &cfg.out_dir {
            write_run(dir, &outcome)?;
        }
        rows.push(AblationRow {
            variant: name.to_string(),
            result: outcome.result,
        });
    }
    let table = AblationTable { rows };
    if let Some(dir) = &config.out_dir {
        write_json(&dir.join("ablation.json"), &table)?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Lambda,
    Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub test: MetricsReport,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn render(&self) -> String {
        let name = match self.param {
            SweepParam::Lambda => "lambda",
            SweepParam::Delta => "delta",
        };
        let mut s = format!("{name:<10}{:>10}{:>10}\n", "mse", "mae");
        for r in &self.rows {
            s += &format!("{:<10}{:>10.4}{:>10.4}\n", r.value, r.test.mse, r.test.mae);
        }
        s
    }
}

/// One run per value of `param`, sharing the seed.
pub fn cmd_sweep(config: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let ds = load_dataset(config)?;
    let mut rows = Vec::new();
    for &value in values {
        let mut cfg = config.clone();
        cfg.loss.mode = LossMode::MsePlusPs;
        match param {
            SweepParam::Lambda => cfg.loss.lambda = value,
            SweepParam::Delta => {
                if value.fract() != 0.0 || value < 2.0 {
                    return Err(Error::Config(format!("delta must be an integer ≥ 2, got {value}")));
                }
                cfg.loss.delta = value as usize;
            }
        }
        info!("sweep {param:?} = {value}");
        let outcome = Trainer::with_dataset(cfg, &ds)?.run()?;
        rows.push(SweepRow {
            value,
            test: outcome.result.test,
            best_epoch: outcome.result.best_epoch,
            best_val_mse: outcome.result.best_val_mse,
        });
    }
    let table = SweepTable { param, rows };
    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("sweep.json"), &table)?;
    }
    Ok(table)
}
