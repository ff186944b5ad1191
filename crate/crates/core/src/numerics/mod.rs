//! Differentiable tensor core: tensors, the reverse-mode tape, the
//! convolutional GRU cell and the Adam optimizer.
//!
//! Everything is generic over [`Real`]; training uses `f32` and gradient
//! checks use `f64`. Tapes and optimizer states are single-owner values, so
//! a run that owns them on one thread is bit-reproducible.

mod adam;
mod conv;
mod gru;
mod real;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamSlot, AdamState};
pub use conv::Padding;
pub use gru::{conv_gru_step, ConvGruParams};
pub use real::Real;
pub use tape::{Activation, DiffAxis, Gradients, Tape, Var};
pub use tensor::Tensor;
