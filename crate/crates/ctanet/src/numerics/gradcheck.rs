//! Central-difference gradient checking.
//!
//! The checker compares tape gradients against `(f(x+h) - f(x-h)) / 2h` per
//! coordinate, with relative error `|analytic - central| / max(1, |central|)`.
//!
//! ReLU and the log clamp are piecewise; a finite difference straddling one
//! of their switch points measures nothing useful. Each evaluation therefore
//! records a signature of every piecewise branch taken, and a coordinate
//! whose two probe evaluations disagree on any branch is excluded from the
//! maximum instead of failing the check.

use crate::error::{Error, Result};

use super::tape::Tape;
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over the checked coordinates.
    pub max_rel_err: f64,
    /// Coordinates compared against the analytic gradient.
    pub checked: usize,
    /// Coordinates skipped because a probe crossed a piecewise switch point.
    pub excluded: Vec<usize>,
}

/// Checks the tape gradient of a scalar-valued graph builder `f` at `x0`.
///
/// `f` must build the same graph structure for every call (same ops in the
/// same order); it receives a fresh tape and the perturbed input each time.
pub fn grad_check<F>(f: F, x0: &[f64], shape: &[usize], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "grad_check: step h must be positive, got {h}"
        )));
    }

    // Analytic gradient at the base point.
    let tape = Tape::new();
    tape.set_check_finite(true);
    let x = tape.leaf(x0.to_vec(), shape)?;
    let loss = f(&tape, &x)?;
    if loss.len() != 1 {
        return Err(Error::Contract(format!(
            "grad_check requires a scalar-valued function, got output shape {:?}",
            loss.shape()
        )));
    }
    tape.backward(&loss)?;
    let analytic = x.grad()?;

    let eval = |data: Vec<f64>| -> Result<(f64, Vec<bool>)> {
        let tape = Tape::new();
        tape.set_check_finite(true);
        tape.set_trace_kinks(true);
        let x = tape.leaf(data, shape)?;
        let out = f(&tape, &x)?;
        Ok((out.item()?, tape.kink_signature()))
    };

    let mut max_rel_err = 0.0f64;
    let mut checked = 0;
    let mut excluded = Vec::new();
    for i in 0..x0.len() {
        let mut plus = x0.to_vec();
        let mut minus = x0.to_vec();
        plus[i] += h;
        minus[i] -= h;
        let (fp, sig_p) = eval(plus)?;
        let (fm, sig_m) = eval(minus)?;
        if sig_p != sig_m {
            excluded.push(i);
            continue;
        }
        let central = (fp - fm) / (2.0 * h);
        let rel = (analytic[i] - central).abs() / central.abs().max(1.0);
        max_rel_err = max_rel_err.max(rel);
        checked += 1;
    }

    Ok(GradCheckReport {
        max_rel_err,
        checked,
        excluded,
    })
}
