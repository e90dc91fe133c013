//! Minimal dense tensor engine with tape-based reverse-mode
//! differentiation, used by every model in the workspace.
//!
//! Values are 64-bit floats throughout. Parameters live in a
//! [`ParamStore`]; a forward pass records onto a fresh [`Tape`], and
//! [`Tape::backward_into`] accumulates parameter gradients into a
//! [`GradStore`] that [`AdamState::step`] consumes.

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod optim;
mod param;
pub mod rng;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use optim::{AdamState, LrSchedule};
pub use param::{GradStore, ParamId, ParamStore};
pub use rng::{RngStreams, Stream};
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;
