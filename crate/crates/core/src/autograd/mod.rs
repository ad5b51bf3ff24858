//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Forward operations live on [`Tape`]; [`Tape::backward`] replays the
//! recorded nodes in reverse creation order. Several backward passes with
//! different targets can run over one forward graph.

mod kernels;
pub mod shape;
mod tape;
mod tensor;

pub use tape::{Axis, ElementwiseOp, Gradients, ReduceOp, Tape};
pub use tensor::{NodeId, Tensor};
