//! Small CPU tensor library with a tape-based reverse-mode autodiff.
//!
//! Everything here is single-threaded and deterministic: the same parameters
//! and inputs always produce bit-identical values and gradients. Layers are
//! generic over [`Float`] so models can be instantiated in `f64` for
//! finite-difference gradient checks and in `f32` for training.

mod float;
mod graph;
mod kernels;
pub mod layers;
mod optim;
mod params;
mod tensor;

pub use float::Float;
pub use graph::{Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
