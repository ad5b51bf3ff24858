//! Experiment runner wiring the structural loss, the DLinear forecaster and
//! the data pipeline into `train`, `evaluate`, `ablate` and `sweep`.

pub mod commands;
pub mod config;
pub mod synthetic;
pub mod trainer;

pub use commands::{cmd_ablate, cmd_evaluate, cmd_sweep, cmd_train, SweepParam};
pub use config::ExperimentConfig;
pub use trainer::{RunResult, TrainOutcome, Trainer};
