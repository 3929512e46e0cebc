//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Every operation runs in 64-bit floats and is recorded on an explicit
//! [`Tape`]. Calling [`Tape::backward`] replays the recorded operations in
//! reverse, accumulating gradients into every tensor that requires them.
//! All computation is single-threaded and bit-deterministic for identical
//! inputs: iteration orders are fixed and no platform-dependent math is used
//! beyond the IEEE 754 operations and libm transcendentals of the host.

mod checkpoint;
mod conv;
mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointEntry};
pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::{Activation, Reduction};
pub use tape::Tape;
pub use tensor::Tensor;
