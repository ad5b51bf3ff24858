use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{uniform_init, Forecaster};
use crate::autograd::{Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
}

/// A single channel-shared linear map from lookback to horizon.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub config: LinearConfig,
    params: Vec<Tensor>,
}

impl LinearModel {
    pub fn new(config: LinearConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.lookback == 0 || config.horizon == 0 || config.channels == 0 {
            return Err(Error::config(format!("degenerate model dimensions {config:?}")));
        }
        let bound = 1.0 / (config.lookback as f64).sqrt();
        let params = vec![
            uniform_init(&[config.lookback, config.horizon], bound, rng),
            uniform_init(&[config.horizon], bound, rng),
        ];
        Ok(LinearModel { config, params })
    }

    pub fn from_params(config: LinearConfig, params: Vec<Tensor>) -> Result<Self> {
        let ok = params.len() == 2
            && params[0].shape() == [config.lookback, config.horizon]
            && params[1].shape() == [config.horizon];
        if !ok {
            return Err(Error::Checkpoint(format!("linear parameters do not match {config:?}")));
        }
        let params = params.iter().map(Tensor::detach).collect();
        Ok(LinearModel { config, params })
    }
}

impl Forecaster for LinearModel {
    fn lookback(&self) -> usize {
        self.config.lookback
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn param_names(&self) -> &'static [&'static str] {
        &["weight", "bias"]
    }

    fn output_layer(&self) -> &'static [usize] {
        &[0]
    }

    fn forward(&self, tape: &Tape, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
        let cfg = &self.config;
        if x.rank() != 3 || x.shape()[2] != cfg.lookback {
            return Err(Error::shape(format!(
                "expected (B, C, {}) input, got {:?}",
                cfg.lookback,
                x.shape()
            )));
        }
        let (b, c) = (x.shape()[0], x.shape()[1]);
        let rows = tape.reshape(x, vec![b * c, cfg.lookback])?;
        let out = tape.add(&tape.matmul(&rows, &params[0])?, &params[1])?;
        tape.reshape(&out, vec![b, c, cfg.horizon])
    }
}
