//! Minimal dense tensor engine with reverse-mode automatic differentiation.
//!
//! Values live in [`Tensor`]; differentiable computations are recorded on a
//! [`Graph`] (a Wengert tape) and replayed in reverse by [`Graph::backward`].
//! [`grad_check`] compares tape gradients against central finite differences.

mod check;
mod error;
mod graph;
mod kernels;
mod scalar;
mod tensor;

pub use check::{grad_check, max_relative_error};
pub use error::{Result, TensorError};
pub use graph::{BnMode, BnState, Graph, Var, BN_EPS, BN_MOMENTUM};
pub use kernels::conv_output_size;
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
