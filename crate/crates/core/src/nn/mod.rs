//! Minimal reverse-mode autodiff and the network components built on it.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod tensor;

pub use graph::{Graph, Gradients, Var};
pub use tensor::Tensor;
