use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{uniform_init, Forecaster};
use crate::autograd::{Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DLinearConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub kernel_size: usize,
    /// One weight set for every channel; otherwise one per channel.
    pub channel_shared: bool,
}

impl DLinearConfig {
    pub fn new(lookback: usize, horizon: usize, channels: usize) -> Self {
        DLinearConfig {
            lookback,
            horizon,
            channels,
            kernel_size: 25,
            channel_shared: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.horizon == 0 || self.channels == 0 {
            return Err(Error::config(format!("degenerate model dimensions {self:?}")));
        }
        check_kernel(self.kernel_size, self.lookback)
    }

    pub(crate) fn weight_shape(&self) -> Vec<usize> {
        if self.channel_shared {
            vec![self.lookback, self.horizon]
        } else {
            vec![self.channels, self.lookback, self.horizon]
        }
    }

    pub(crate) fn bias_shape(&self) -> Vec<usize> {
        if self.channel_shared {
            vec![self.horizon]
        } else {
            vec![self.channels, 1, self.horizon]
        }
    }
}

fn check_kernel(kernel: usize, len: usize) -> Result<()> {
    if kernel.is_multiple_of(2) {
        return Err(Error::config(format!(
            "moving-average kernel must be odd, got {kernel}"
        )));
    }
    if kernel > 2 * len - 1 {
        return Err(Error::config(format!("kernel {kernel} too wide for length {len}")));
    }
    Ok(())
}

/// Trend / seasonal split over the last axis: the trend is a centered moving
/// average with replicate padding, the seasonal part is the remainder.
pub fn decompose(tape: &Tape, x: &Tensor, kernel: usize) -> Result<(Tensor, Tensor)> {
    let len = *x
        .shape()
        .last()
        .ok_or_else(|| Error::shape("cannot decompose a scalar"))?;
    check_kernel(kernel, len)?;
    let trend = tape.moving_average(x, kernel)?;
    let seasonal = tape.sub(x, &trend)?;
    Ok((trend, seasonal))
}

/// Decomposition-linear forecaster: two linear maps from lookback to
/// horizon, one on the trend and one on the seasonal part, summed.
/// Parameters are `[w_trend, b_trend, w_seasonal, b_seasonal]`.
#[derive(Debug, Clone)]
pub struct DLinear {
    pub config: DLinearConfig,
    params: Vec<Tensor>,
}

pub const W_TREND: usize = 0;
pub const B_TREND: usize = 1;
pub const W_SEASONAL: usize = 2;
pub const B_SEASONAL: usize = 3;

impl DLinear {
    /// Weights and biases drawn from `U(−1/√L, 1/√L)`.
    pub fn new(config: DLinearConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let bound = 1.0 / (config.lookback as f64).sqrt();
        let params = vec![
            uniform_init(&config.weight_shape(), bound, rng),
            uniform_init(&config.bias_shape(), bound, rng),
            uniform_init(&config.weight_shape(), bound, rng),
            uniform_init(&config.bias_shape(), bound, rng),
        ];
        Ok(DLinear { config, params })
    }

    pub fn zeros(config: DLinearConfig) -> Result<Self> {
        config.validate()?;
        let params = vec![
            Tensor::zeros(config.weight_shape())?,
            Tensor::zeros(config.bias_shape())?,
            Tensor::zeros(config.weight_shape())?,
            Tensor::zeros(config.bias_shape())?,
        ];
        Ok(DLinear { config, params })
    }

    pub fn from_params(config: DLinearConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let expected = [
            config.weight_shape(),
            config.bias_shape(),
            config.weight_shape(),
            config.bias_shape(),
        ];
        if params.len() != 4 || params.iter().zip(&expected).any(|(p, s)| p.shape() != s.as_slice()) {
            return Err(Error::Checkpoint(format!("DLinear parameters do not match {config:?}")));
        }
        let params = params.iter().map(Tensor::detach).collect();
        Ok(DLinear { config, params })
    }
}

impl Forecaster for DLinear {
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
        &["w_trend", "b_trend", "w_seasonal", "b_seasonal"]
    }

    fn output_layer(&self) -> &'static [usize] {
        &[W_TREND, W_SEASONAL]
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
        if cfg.channel_shared {
            let rows = tape.reshape(x, vec![b * c, cfg.lookback])?;
            let (trend, seasonal) = decompose(tape, &rows, cfg.kernel_size)?;
            let t = tape.add(&tape.matmul(&trend, &params[W_TREND])?, &params[B_TREND])?;
            let s = tape.add(&tape.matmul(&seasonal, &params[W_SEASONAL])?, &params[B_SEASONAL])?;
            tape.reshape(&tape.add(&t, &s)?, vec![b, c, cfg.horizon])
        } else {
            if c != cfg.channels {
                return Err(Error::shape(format!(
                    "per-channel model has {} channels, input has {c}",
                    cfg.channels
                )));
            }
            let by_channel = tape.transpose(x, 0, 1)?;
            let (trend, seasonal) = decompose(tape, &by_channel, cfg.kernel_size)?;
            let t = tape.add(&tape.bmm(&trend, &params[W_TREND])?, &params[B_TREND])?;
            let s = tape.add(&tape.bmm(&seasonal, &params[W_SEASONAL])?, &params[B_SEASONAL])?;
            tape.transpose(&tape.add(&t, &s)?, 0, 1)
        }
    }
}
