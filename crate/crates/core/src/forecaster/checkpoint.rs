use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DLinear, DLinearConfig, Forecaster, LinearConfig, LinearModel, Model};
use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "psloss-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    DLinear(DLinearConfig),
    Linear(LinearConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// JSON container for a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelSpec,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        let spec = match model {
            Model::DLinear(m) => ModelSpec::DLinear(m.config),
            Model::Linear(m) => ModelSpec::Linear(m.config),
        };
        let params = model
            .param_names()
            .iter()
            .zip(model.params())
            .map(|(name, p)| ParamRecord {
                name: (*name).to_string(),
                shape: p.shape().to_vec(),
                values: p.to_vec(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: spec,
            params,
        }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let tensors = self
            .params
            .into_iter()
            .map(|r| {
                Tensor::new(r.shape, r.values).map_err(|e| Error::Checkpoint(format!("parameter {}: {e}", r.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        match self.model {
            ModelSpec::DLinear(cfg) => Ok(Model::DLinear(DLinear::from_params(cfg, tensors)?)),
            ModelSpec::Linear(cfg) => Ok(Model::Linear(LinearModel::from_params(cfg, tensors)?)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}
