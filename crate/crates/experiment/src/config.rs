//! Experiment configuration, loadable from TOML or JSON.

use std::fs;
use std::path::{Path, PathBuf};

use psloss::data::SplitSpec;
use psloss::gdw::ScaleScope;
use psloss::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::synthetic::SyntheticSpec;

/// Environment variable naming the directory relative dataset paths are
/// resolved against.
pub const DATA_DIR_ENV: &str = "PSLOSS_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Csv { path: PathBuf },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default)]
    pub split: SplitSpec,
}

impl DataConfig {
    pub fn csv(path: impl Into<PathBuf>) -> Self {
        DataConfig {
            source: DataSource::Csv { path: path.into() },
            split: SplitSpec::EttHourly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Dlinear,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub kernel_size: usize,
    pub channel_shared: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Dlinear,
            kernel_size: 25,
            channel_shared: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    MseOnly,
    #[default]
    MsePlusPs,
}

/// Components switched off for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_corr: bool,
    pub no_var: bool,
    pub no_mean: bool,
    /// One patch spanning the whole horizon.
    pub no_patching: bool,
    /// Fixed weights of 1.0 instead of gradient-based weighting.
    pub no_weighting: bool,
}

impl Ablation {
    /// The full loss followed by the five single-component ablations.
    pub fn variants() -> [(&'static str, Ablation); 6] {
        let none = Ablation::default();
        [
            ("full", none),
            ("w/o corr", Ablation { no_corr: true, ..none }),
            ("w/o var", Ablation { no_var: true, ..none }),
            ("w/o mean", Ablation { no_mean: true, ..none }),
            (
                "w/o patching",
                Ablation {
                    no_patching: true,
                    ..none
                },
            ),
            (
                "w/o weighting",
                Ablation {
                    no_weighting: true,
                    ..none
                },
            ),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub mode: LossMode,
    pub lambda: f64,
    /// Patch length threshold.
    pub delta: usize,
    pub ablation: Ablation,
    pub scale_scope: ScaleScope,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            mode: LossMode::MsePlusPs,
            lambda: 3.0,
            delta: 48,
            ablation: Ablation::default(),
            scale_scope: ScaleScope::Global,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    /// Hard cap on optimizer steps across all epochs.
    pub max_train_steps: Option<usize>,
    /// Windows between successive training samples.
    pub stride: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 10,
            patience: 3,
            lr_decay: 0.5,
            max_train_steps: None,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default = "default_lookback")]
    pub lookback: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub seed: u64,
    /// Optimizer steps between weight-trace records.
    #[serde(default = "default_log_interval")]
    pub log_interval: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_lookback() -> usize {
    336
}

fn default_horizon() -> usize {
    96
}

fn default_log_interval() -> usize {
    10
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig::csv("ETTh1.csv"),
            lookback: default_lookback(),
            horizon: default_horizon(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            seed: 2024,
            log_interval: default_log_interval(),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the file extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.lookback == 0 || self.horizon == 0 {
            return fail("lookback and horizon must be positive".into());
        }
        if self.loss.mode == LossMode::MsePlusPs {
            if !(self.loss.lambda >= 0.0 && self.loss.lambda.is_finite()) {
                return fail(format!(
                    "lambda must be finite and non-negative, got {}",
                    self.loss.lambda
                ));
            }
            if self.loss.delta < 2 {
                return fail(format!("delta must be at least 2, got {}", self.loss.delta));
            }
            if self.horizon < 4 && !self.loss.ablation.no_patching {
                return fail(format!(
                    "adaptive patching needs a horizon of at least 4, got {}",
                    self.horizon
                ));
            }
            let a = self.loss.ablation;
            if a.no_corr && a.no_var && a.no_mean {
                return fail("every structural component is disabled".into());
            }
        }
        let o = &self.optim;
        if o.batch_size == 0 || o.epochs == 0 || o.stride == 0 {
            return fail("batch_size, epochs and stride must be positive".into());
        }
        if !(o.lr > 0.0 && o.lr.is_finite()) || !(o.lr_decay > 0.0 && o.lr_decay <= 1.0) {
            return fail(format!("invalid learning rate {} or decay {}", o.lr, o.lr_decay));
        }
        if self.log_interval == 0 {
            return fail("log_interval must be positive".into());
        }
        if self.model.kind == ModelKind::Dlinear
            && (self.model.kernel_size.is_multiple_of(2) || self.model.kernel_size > 2 * self.lookback - 1)
        {
            return fail(format!(
                "kernel_size {} must be odd and at most 2·lookback − 1",
                self.model.kernel_size
            ));
        }
        Ok(())
    }

    /// Dataset path after applying the data-directory environment variable
    /// to relative paths.
    pub fn resolved_csv_path(&self) -> Option<PathBuf> {
        match &self.data.source {
            DataSource::Csv { path } => Some(resolve_data_path(path)),
            DataSource::Synthetic(_) => None,
        }
    }
}

pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => Path::new(&dir).join(path),
        None => path.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml_and_json() {
        let cfg = ExperimentConfig::default();
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            [data.source]
            kind = "csv"
            path = "ETTh1.csv"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.lookback, 336);
        assert_eq!(cfg.loss.lambda, 3.0);
        assert_eq!(cfg.data.split, SplitSpec::EttHourly);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.loss.delta = 1;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::default();
        cfg.model.kernel_size = 24;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.loss.ablation = Ablation {
            no_corr: true,
            no_var: true,
            no_mean: true,
            ..Ablation::default()
        };
        assert!(cfg.validate().is_err());
    }
}
