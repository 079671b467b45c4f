//! Small dense-tensor autodiff engine.
//!
//! [`Tensor`] holds values; a [`Graph`] records operations on [`Var`]
//! handles and differentiates them in reverse mode. Gradients can be made
//! differentiable themselves, which is what unrolled inner optimization
//! loops need.

mod error;
pub mod functional;
mod graph;
pub mod kernels;
mod tensor;

pub use error::{Result, TensorError};
pub use functional::spatial_soft_argmax;
pub use graph::{huber, sigmoid, softplus, Graph, Var};
pub use tensor::Tensor;
