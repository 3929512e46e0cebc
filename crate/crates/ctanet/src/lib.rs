//! Coarse temporal attention network for activity recognition.
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`]: dense f64 tensors with reverse-mode autodiff on an
//!   explicit tape, gradient checking, and checkpoint serialization.
//! * [`glimpse`]: per-frame feature extractor with a shared conv trunk,
//!   coarse temporal branches, and in-branch spatial self-attention.
//! * [`sequence`]: LSTM over glimpse vectors, pairwise temporal attention
//!   on hidden states, attention pooling, and the classifier head.
//! * [`model`]: the full video classifier composing glimpse and sequence.
//! * [`training`]: cross-entropy, Adam, the LR schedule, frame sampling,
//!   the train/eval loops, and the ablation harness.
//! * [`data`]: procedural synthetic video benchmark with byte-deterministic
//!   generation and an on-disk dataset format.
//! * [`explain`]: gradient-weighted activation maps per temporal branch.
//! * [`cli`]: the command-line front end.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod explain;
pub mod glimpse;
pub mod model;
pub mod numerics;
pub mod params;
pub mod rng;
pub mod sequence;
pub mod training;

pub use error::{Error, Result};
