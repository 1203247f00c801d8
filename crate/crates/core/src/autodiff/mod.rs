//! Reverse-mode automatic differentiation over dense NCHW tensors.
//!
//! A [`Graph`] records every operation as it runs; [`Graph::backward`]
//! then walks the tape in reverse and leaves `∂loss/∂leaf` on each leaf
//! created with `requires_grad`. The engine is generic over [`Real`] so
//! the same code runs in `f32` for training and attacks and in `f64` for
//! finite-difference validation.

pub mod gradcheck;
mod graph;
pub mod kernels;
mod params;
mod real;
mod rmsprop;
mod tensor;

pub use graph::{Graph, Var, LOG_GUARD};
pub use params::ModelParams;
pub use real::Real;
pub use rmsprop::{RmspropConfig, RmspropState};
pub use tensor::Tensor;
