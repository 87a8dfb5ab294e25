//! Tensors on a tape: operators, reverse-mode gradients and the Adam optimizer.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod params;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Activation, Gradients, Graph, NodeId, LEAKY_SLOPE, LOG_CLAMP};
pub use params::{Param, ParamGroup, ParamId, ParamStore};
