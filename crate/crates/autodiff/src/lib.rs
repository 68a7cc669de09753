//! Reverse-mode automatic differentiation over dense n-dimensional arrays.
//!
//! A [`Graph`] is built once (define-then-run): input placeholders,
//! parameters and layer ops are appended in topological order, then
//! [`Graph::run`] evaluates the nodes needed for a set of targets and
//! [`Graph::backward`] propagates gradients from a scalar loss node.
//!
//! The engine is generic over the element type through [`Real`]; models run
//! in `f32`, while gradient checks can instantiate the very same code at
//! `f64` where central differences are not swamped by rounding noise.

mod adam;
mod container;
mod error;
pub mod gradcheck;
mod graph;
mod kernels;
mod real;
pub mod rng;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use container::{TensorFile, TensorFileError};
pub use error::{Error, Result};
pub use graph::{DropoutMode, Graph, NodeId, NormMode, RunConfig};
pub use real::Real;
pub use tensor::Tensor;
