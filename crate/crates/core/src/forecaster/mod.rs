//! Linear forecasters, the Adam optimizer and checkpointing.

mod adam;
mod checkpoint;
mod dlinear;
mod linear;

use rand::Rng;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, ModelSpec, ParamRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use dlinear::{decompose, DLinear, DLinearConfig, B_SEASONAL, B_TREND, W_SEASONAL, W_TREND};
pub use linear::{LinearConfig, LinearModel};

use crate::autograd::{Tape, Tensor};
use crate::error::Result;

/// A model mapping `(B, C, L)` lookback windows to `(B, C, T)` forecasts.
///
/// `forward` takes the parameters explicitly so the caller can pass tape
/// leaves for training; `predict` runs on the stored, detached values.
pub trait Forecaster {
    fn lookback(&self) -> usize;
    fn horizon(&self) -> usize;
    fn params(&self) -> &[Tensor];
    fn params_mut(&mut self) -> &mut [Tensor];
    fn param_names(&self) -> &'static [&'static str];
    /// Indices of the parameters whose gradients drive loss weighting.
    fn output_layer(&self) -> &'static [usize];
    fn forward(&self, tape: &Tape, params: &[Tensor], x: &Tensor) -> Result<Tensor>;

    fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(&Tape::new(), self.params(), x)
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(Tensor::len).sum()
    }
}

/// Either supported model, for code that picks one at run time.
#[derive(Debug, Clone)]
pub enum Model {
    DLinear(DLinear),
    Linear(LinearModel),
}

impl Model {
    fn inner(&self) -> &dyn Forecaster {
        match self {
            Model::DLinear(m) => m,
            Model::Linear(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Forecaster {
        match self {
            Model::DLinear(m) => m,
            Model::Linear(m) => m,
        }
    }
}

impl Forecaster for Model {
    fn lookback(&self) -> usize {
        self.inner().lookback()
    }

    fn horizon(&self) -> usize {
        self.inner().horizon()
    }

    fn params(&self) -> &[Tensor] {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        self.inner_mut().params_mut()
    }

    fn param_names(&self) -> &'static [&'static str] {
        self.inner().param_names()
    }

    fn output_layer(&self) -> &'static [usize] {
        self.inner().output_layer()
    }

    fn forward(&self, tape: &Tape, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
        self.inner().forward(tape, params, x)
    }
}

pub(crate) fn uniform_init(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let len = shape.iter().product();
    let values = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), values).expect("non-empty parameter shape")
}
