//! Reverse-mode automatic differentiation over dense NCHW tensors.
//!
//! The engine is deliberately small: a tape of typed operations, im2col
//! convolutions backed by `matrixmultiply`, and an Adam optimizer. Every
//! operation is generic over [`Float`] so the same model code runs in `f32`
//! for training and `f64` for finite-difference checks.

mod error;
mod float;
mod graph;
pub mod kernels;
mod optim;
mod params;
mod tensor;

pub use error::{Error, Result};
pub use float::Float;
pub use graph::{CustomOp, Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Tensor;
