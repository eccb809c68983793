//! Pure-transformer salient object detection for RGB and RGB-D inputs.
//!
//! The crate is self-contained: a small tensor type with reverse-mode
//! autodiff, the token operations and attention layers the model is built
//! from, the model itself, a data pipeline, training and evaluation metrics.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod tokens;
pub mod train;

pub use tensor::{Float, Tensor, TensorError};
