//! Reverse-mode differentiation substrate.
//!
//! All trainable computation in the crate runs through [`Tape`]: forward
//! primitives are recorded in order, and [`Tape::backward`] replays them in
//! exact reverse to accumulate gradients into [`ParamTensor`] slots. Values
//! are 64-bit throughout and every reduction runs in index order, so a given
//! build produces bit-identical forward values and gradients.

mod checkpoint;
mod gradcheck;
mod optim;
pub mod special;
mod tape;
mod tensor;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{gradient_check, gradient_check_coords};
pub use optim::{Adam, RmsProp};
pub use tape::{CustomVjp, Tape, TapeView, TensorId};
pub use tensor::{ParamId, ParamStore, ParamTensor};
