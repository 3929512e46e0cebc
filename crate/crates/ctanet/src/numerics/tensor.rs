//! The tensor handle: shape, row-major f64 storage, and a gradient slot.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

#[derive(Debug)]
pub(crate) struct TensorInner {
    pub id: u64,
    pub shape: Vec<usize>,
    /// Row-major values; immutable once the tensor is built.
    pub data: Vec<f64>,
    pub requires_grad: bool,
    /// Same-shape gradient accumulator; `None` until backward touches it.
    pub grad: RefCell<Option<Vec<f64>>>,
}

/// Cheap-to-clone handle to an immutable value node in a computation graph.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<TensorInner>,
}

impl Tensor {
    /// Builds a tensor from row-major data. The element count must match the
    /// shape product; scalars use shape `[1]`.
    pub fn new(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if shape.is_empty() || expect != data.len() {
            return Err(Error::Dimension(format!(
                "tensor data of length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor {
            inner: Rc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: shape.to_vec(),
                data,
                requires_grad,
                grad: RefCell::new(None),
            }),
        })
    }

    pub fn zeros(shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        Tensor::new(vec![0.0; n], shape, requires_grad)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![v], &[1], false).expect("scalar shape is valid")
    }

    /// Stable identity of this value node; two handles to the same node
    /// compare equal. Used for parameter-sharing assertions.
    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn len(&self) -> usize {
        self.inner.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.len() != 1 {
            return Err(Error::Contract(format!(
                "item() needs a one-element tensor, got shape {:?}",
                self.shape()
            )));
        }
        Ok(self.inner.data[0])
    }

    /// Accumulated gradient, zeros if backward never reached this tensor.
    /// Errors if the tensor does not require gradients.
    pub fn grad(&self) -> Result<Vec<f64>> {
        if !self.inner.requires_grad {
            return Err(Error::Contract(
                "grad() called on a tensor that does not require gradients".into(),
            ));
        }
        Ok(match &*self.inner.grad.borrow() {
            Some(g) => g.clone(),
            None => vec![0.0; self.len()],
        })
    }

    /// Adds `delta` into the gradient accumulator.
    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.len());
        let mut slot = self.inner.grad.borrow_mut();
        match &mut *slot {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Clears the gradient accumulator.
    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }
}

/// Shape equality guard shared by elementwise ops.
pub(crate) fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{op}: shapes {:?} and {:?} do not match",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}
