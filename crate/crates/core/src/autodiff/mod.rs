//! Dense `f32` tensors and a reverse-mode gradient tape.

pub mod kernels;
pub mod tape;
pub mod tensor;

pub use tape::{input_gradient, saliency, BatchStats, BnMode, Gradients, Tape, Var, BN_EPS};
pub use tensor::Tensor;
