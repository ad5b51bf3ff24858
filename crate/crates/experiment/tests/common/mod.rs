#![allow(dead_code)]

use psloss::data::SplitSpec;
use psloss::forecaster::Forecaster;
use psloss::Tensor;
use psloss_experiment::config::{DataConfig, DataSource, ExperimentConfig};
use psloss_experiment::synthetic::SyntheticSpec;
use psloss_experiment::RunResult;

/// A two-channel sinusoid small enough for debug-speed tests.
pub fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        data: DataConfig {
            source: DataSource::Synthetic(SyntheticSpec::sinusoid(900, 2, 11)),
            split: SplitSpec::ratio_default(),
        },
        lookback: 48,
        horizon: 48,
        seed: 7,
        log_interval: 5,
        ..ExperimentConfig::default()
    };
    cfg.optim.batch_size = 16;
    cfg.optim.epochs = 2;
    cfg.optim.max_train_steps = Some(30);
    cfg.model.kernel_size = 13;
    cfg
}

pub fn flat_params(model: &impl Forecaster) -> Vec<f64> {
    model
        .params()
        .iter()
        .flat_map(|p: &Tensor| p.values().to_vec())
        .collect()
}

/// The result with wall-clock fields zeroed.
pub fn without_timings(mut r: RunResult) -> RunResult {
    for e in &mut r.epochs {
        e.train_seconds = 0.0;
        e.val_seconds = 0.0;
    }
    r
}
