//! Unsupervised video frame interpolation: warping, the interpolation model,
//! training objectives, data handling, the training loop and evaluation.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod frame;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod train;
pub mod warp;

pub use error::{Error, Result};
pub use frame::Frame;
pub use model::{InterpModel, Interpolator, ModelConfig};
pub use warp::FlowField;
