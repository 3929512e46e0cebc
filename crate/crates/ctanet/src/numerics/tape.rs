//! The recording tape: an ordered log of executed operations.
//!
//! Operations append themselves during the forward pass, so the record order
//! is already a topological order of the graph. `backward` walks the records
//! in reverse, propagating gradients through a pass-local map and flushing
//! the totals into each tensor's persistent accumulator at the end.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Receives `(input tensor, gradient contribution)` pairs from an op.
pub(crate) type GradSink<'a> = &'a mut dyn FnMut(&Tensor, &[f64]);

/// Maps the output gradient of one op to contributions for its inputs.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], GradSink)>;

pub(crate) struct OpRecord {
    pub name: &'static str,
    pub output: Tensor,
    pub backward: BackwardFn,
}

/// Records every op built through it and replays them in reverse on demand.
///
/// A tape owns one forward graph. Parameters live outside the tape as plain
/// arrays; each training step binds them as fresh leaf tensors, so dropping
/// the tape frees the whole graph.
#[derive(Default)]
pub struct Tape {
    pub(crate) records: RefCell<Vec<OpRecord>>,
    check_finite: Cell<bool>,
    trace_kinks: Cell<bool>,
    kink_bits: RefCell<Vec<bool>>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    /// When enabled, every op verifies its output is finite and fails with
    /// the op name otherwise. Off by default; gradient checking turns it on.
    pub fn set_check_finite(&self, on: bool) {
        self.check_finite.set(on);
    }

    /// When enabled, piecewise ops (ReLU, the log clamp) record which branch
    /// every element took. Two forward passes that agree on the signature
    /// stayed on the same smooth piece everywhere.
    pub fn set_trace_kinks(&self, on: bool) {
        self.trace_kinks.set(on);
    }

    pub(crate) fn tracing_kinks(&self) -> bool {
        self.trace_kinks.get()
    }

    pub(crate) fn trace_kink_bits(&self, bits: impl Iterator<Item = bool>) {
        self.kink_bits.borrow_mut().extend(bits);
    }

    /// Branch signature recorded since the tape was created.
    pub fn kink_signature(&self) -> Vec<bool> {
        self.kink_bits.borrow().clone()
    }

    /// Leaf with gradient tracking, e.g. a bound model parameter.
    pub fn leaf(&self, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(data, shape, true)
    }

    /// Leaf without gradient tracking, e.g. an input frame.
    pub fn constant(&self, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(data, shape, false)
    }

    pub(crate) fn push(&self, name: &'static str, output: Tensor, backward: BackwardFn) -> Result<Tensor> {
        if self.check_finite.get() && !output.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value in output of op `{name}`"
            )));
        }
        self.records.borrow_mut().push(OpRecord {
            name,
            output: output.clone(),
            backward,
        });
        Ok(output)
    }

    pub fn num_ops(&self) -> usize {
        self.records.borrow().len()
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Seeds `d loss/d loss = 1` and replays the recorded ops newest-first.
    /// Each call computes one full gradient and adds it to the persistent
    /// accumulators, so calling backward twice doubles every gradient.
    /// Tensors the sweep never reaches keep zero gradients.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if !loss.requires_grad() {
            return Err(Error::Contract(
                "backward requires a loss that depends on at least one tracked tensor".into(),
            ));
        }

        // Pass-local gradients keyed by tensor id.
        let mut local: HashMap<u64, (Tensor, Vec<f64>)> = HashMap::new();
        local.insert(loss.id(), (loss.clone(), vec![1.0]));
        let mut done: Vec<(Tensor, Vec<f64>)> = Vec::new();

        let records = self.records.borrow();
        for rec in records.iter().rev() {
            let Some((out, grad)) = local.remove(&rec.output.id()) else {
                continue;
            };
            if self.check_finite.get() && grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient flowing into op `{}`",
                    rec.name
                )));
            }
            let mut sink = |t: &Tensor, contrib: &[f64]| {
                debug_assert_eq!(contrib.len(), t.len());
                match local.entry(t.id()) {
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        for (a, c) in e.get_mut().1.iter_mut().zip(contrib) {
                            *a += c;
                        }
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert((t.clone(), contrib.to_vec()));
                    }
                }
            };
            (rec.backward)(&grad, &mut sink);
            done.push((out, grad));
        }

        for (t, g) in done {
            if t.requires_grad() {
                t.accumulate_grad(&g);
            }
        }
        for (_, (t, g)) in local {
            if t.requires_grad() {
                t.accumulate_grad(&g);
            }
        }
        Ok(())
    }
}
