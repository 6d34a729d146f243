//! Reverse-mode differentiation over dense tensors.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use graph::{BackwardFn, Elementwise, Gradients, Graph, Var};
pub use tensor::Tensor;

pub(crate) use graph::softmax_rows;
