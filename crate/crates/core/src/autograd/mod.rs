//! Minimal reverse-mode autodiff over dense `f64` tensors.

mod graph;
mod kernels;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
