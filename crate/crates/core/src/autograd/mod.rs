//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its nodes. Leaves are created
//! with [`Graph::param`] (tracked) or [`Graph::constant`]; after
//! [`Graph::backward`] the gradient of each tracked node is available through
//! [`Graph::grad`]. Graphs are single-use and single-threaded; independent graphs
//! can be built concurrently.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{compare_with_finite_differences, grad_check, grad_check_with, relative_error, GradCheckReport};
pub use graph::{Graph, Var, MASK_VALUE};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutogradError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this graph")]
    GraphReuse,
}
