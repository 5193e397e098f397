//! Dense-array substrate: tensors, a reverse-mode autodiff graph over the
//! small set of operations the denoiser needs, and finite-difference
//! gradient verification.

mod gradcheck;
mod graph;
mod scalar;
mod tensor;

pub use gradcheck::{expected_tolerance, gradient_check, primitive_suite, PrimitiveCase};
pub use graph::{Gradients, Graph, Var};
pub use scalar::{Dtype, Scalar};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tensor data length {len} does not match shape {shape:?}")]
    LengthMismatch { len: usize, shape: Vec<usize> },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("{0}")]
    InvalidArgument(String),
}
