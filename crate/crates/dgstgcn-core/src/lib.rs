//! Skeleton action recognition with dynamic-group spatial-temporal graph
//! convolutions, from tensors to training loop, with no external compute
//! dependencies.
//!
//! Layout convention throughout: activations are `[N, C, T, V]` (batch,
//! channel, frame, joint), row-major in a flat `Vec`. Spatial mixing matrices
//! are indexed `[group, source joint, destination joint]`.
//!
//! The crate is generic over the float type via [`tensor::Scalar`] (f32 for
//! training speed, f64 for gradient checking); random streams are drawn
//! through f64 so both precisions see the same sequence of draws.

pub mod autodiff;
pub mod check;
pub mod data;
pub mod error;
pub mod gcn;
pub mod gradcheck;
pub mod net;
pub mod optim;
pub mod presets;
pub mod profile;
pub mod train;
pub mod tcn;
pub mod tensor;

pub use error::{Error, Result};
