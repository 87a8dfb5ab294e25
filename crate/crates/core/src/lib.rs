//! Glance classification with a reconstruction-regularized hourglass network.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradient_suite;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod persist;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
/// Single-precision weights, used for training.
pub type Model32 = model::ModelWeights<f32>;
/// Double-precision weights, used by the gradient checks.
pub type Model64 = model::ModelWeights<f64>;
