//! Differentiable tensor kernel and model blocks for multimodal gait
//! recognition.
//!
//! The crate is `no_std` (with `alloc`) so the numeric core stays free of
//! IO concerns; the companion `gaitfusion` crate carries datasets, file
//! formats, and the CLI.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod c2fusion;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use error::TensorError;
pub use scalar::{Dtype, Scalar};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
