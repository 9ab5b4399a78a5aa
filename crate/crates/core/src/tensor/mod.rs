//! Dense tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is an n-dimensional row-major array of binary64 values.
//! Operations on tensors record their inputs on a dynamically built graph;
//! [`backward`](crate::tensor::backward) walks that graph in reverse and
//! accumulates d(loss)/d(leaf) into each trainable leaf's `grad` buffer.
//! The graph is rebuilt on every forward pass and freed when the loss
//! tensor is dropped.
//!
//! Compute is binary64 throughout; the on-disk checkpoint format stores
//! binary32 (see [`checkpoint`]).

mod adam;
mod backward;
mod checkpoint;
mod init;
mod ops;
#[cfg(test)]
mod tests;

pub use adam::{adam_step, zero_grad_all, AdamState};
pub use backward::backward;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointTensor};
pub use init::he_uniform;
pub use ops::{
    batchnorm, concat_channels, conv2d, dense, mae_loss, maxpool2, mse_loss, relu, reshape,
    sigmoid, sum_all, upsample2_nearest, BnStats, Mode, Padding,
};

use std::cell::{Ref, RefCell, RefMut};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use backward::Op;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct TensorInner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    /// Operation that produced this tensor; `None` for leaves.
    pub(crate) op: Option<Op>,
}

/// Dense n-dimensional array with optional gradient buffer.
///
/// Cloning a `Tensor` is cheap: it copies a reference-counted handle to
/// shared storage. Tensors are not `Send`; a training step owns its graph
/// on a single thread, and parallel workers each build their own tensors.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<TensorInner>,
}

impl Tensor {
    fn new_inner(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Option<Op>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                op,
            }),
        }
    }

    /// Leaf tensor from a flat row-major buffer.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            ));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("from_vec", format!("zero dimension in {:?}", shape)));
        }
        Ok(Tensor::new_inner(data, shape.to_vec(), false, None))
    }

    /// Rank-0 scalar leaf.
    pub fn scalar(value: f64) -> Tensor {
        Tensor::new_inner(vec![value], Vec::new(), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::new_inner(vec![0.0; numel], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::new_inner(vec![value; numel], shape.to_vec(), false, None)
    }

    /// Marks this tensor as a trainable leaf. Only meaningful on leaves.
    pub fn requires_grad(self) -> Tensor {
        debug_assert!(self.inner.op.is_none(), "requires_grad is set on leaves");
        Tensor {
            inner: Rc::new(TensorInner {
                id: self.inner.id,
                shape: self.inner.shape.clone(),
                data: RefCell::new(self.inner.data.borrow().clone()),
                grad: RefCell::new(None),
                requires_grad: true,
                op: None,
            }),
        }
    }

    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op) -> Tensor {
        let track = op.parents().iter().any(|p| p.tracked());
        let op = if track { Some(op) } else { None };
        Tensor::new_inner(data, shape, false, op)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.borrow().len()
    }

    /// True when gradients flow through or into this tensor.
    pub fn tracked(&self) -> bool {
        self.inner.requires_grad || self.inner.op.is_some()
    }

    pub fn is_trainable_leaf(&self) -> bool {
        self.inner.requires_grad && self.inner.op.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    /// Mutable access to the raw buffer (parameter updates, loading weights).
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.inner.data.borrow_mut()
    }

    pub fn grad(&self) -> Ref<'_, Option<Vec<f64>>> {
        self.inner.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Adds `delta` into the leaf's gradient buffer, allocating it on first use.
    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let data = self.inner.data.borrow();
        assert_eq!(data.len(), 1, "item() on tensor with {} elements", data.len());
        data[0]
    }

    pub(crate) fn parent_op(&self) -> Option<&Op> {
        self.inner.op.as_ref()
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.inner.id, self.inner.shape, self.inner.requires_grad
        )
    }
}

/// Debug-mode guard: forward ops must not introduce NaN/Inf on finite inputs.
#[cfg(debug_assertions)]
pub(crate) fn debug_check_finite(op: &'static str, inputs: &[&Tensor], out: &[f64]) {
    let inputs_finite = inputs
        .iter()
        .all(|t| t.data().iter().all(|v| v.is_finite()));
    if inputs_finite {
        assert!(
            out.iter().all(|v| v.is_finite()),
            "{op}: non-finite output from finite inputs"
        );
    }
}

#[cfg(not(debug_assertions))]
pub(crate) fn debug_check_finite(_op: &'static str, _inputs: &[&Tensor], _out: &[f64]) {}

