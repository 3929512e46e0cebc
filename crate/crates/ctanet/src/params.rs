//! Named model parameters and their binding onto tapes.
//!
//! Parameters are plain arrays owned by model structs. Each forward pass
//! binds them as fresh leaf tensors on a tape; after backward, the gradient
//! is read from the bound leaf. This keeps graphs self-contained per pass
//! while the canonical values live in one place.

use crate::error::Result;
use crate::numerics::{CheckpointEntry, Tape, Tensor};
use crate::rng::SplitMix64;

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    /// Uniform init in [-scale, scale].
    pub fn uniform(name: impl Into<String>, shape: &[usize], scale: f64, rng: &mut SplitMix64) -> Param {
        let n: usize = shape.iter().product();
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.uniform(-scale, scale)).collect(),
        }
    }

    pub fn constant(name: impl Into<String>, shape: &[usize], value: f64) -> Param {
        let n: usize = shape.iter().product();
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Param {
        Param::constant(name, shape, 0.0)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Fresh gradient-tracking leaf carrying this parameter's current value.
    pub fn bind(&self, tape: &Tape) -> Result<Tensor> {
        tape.leaf(self.data.clone(), &self.shape)
    }

    pub fn to_entry(&self) -> CheckpointEntry {
        CheckpointEntry {
            name: self.name.clone(),
            shape: self.shape.clone(),
            data: self.data.clone(),
        }
    }
}
