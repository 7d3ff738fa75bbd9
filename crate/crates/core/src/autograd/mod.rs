//! Dense tensors with tape-based reverse-mode differentiation.

pub mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
