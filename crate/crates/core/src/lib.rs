//! Structural forecasting loss built from patch-level correlation, variance and mean terms.
//!
//! The crate bundles a small reverse-mode autograd engine, Fourier-based
//! adaptive patching, the patch-level correlation / variance / mean losses,
//! gradient-based dynamic weighting of those losses, a DLinear forecaster
//! with Adam, an ETT-style data pipeline and shape-aware evaluation metrics.

pub mod autograd;
pub mod data;
pub mod error;
pub mod forecaster;
pub mod gdw;
pub mod loss;
pub mod metrics;
pub mod patching;

pub use autograd::{Axis, ElementwiseOp, Gradients, NodeId, ReduceOp, Tape, Tensor};
pub use error::{Error, Result};
