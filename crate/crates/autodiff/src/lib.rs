//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Small by design: exactly the operation set a tied-embedding masked
//! autoencoder and its retrieval fine-tuning losses need, each with a
//! hand-derived backward rule that is checked against central finite
//! differences in the test suite. Everything is 64-bit and deterministic;
//! replaying the same graph yields bit-identical losses and gradients.

mod error;
pub mod gradcheck;
pub mod optim;
mod tape;
mod tensor;

pub use error::{AdError, Result};
pub use tape::{Tape, TensorId};
pub use tensor::Tensor;
