//! Dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Tensors are row-major buffers plus shape metadata. Every op that involves
//! a gradient-tracked input records a node with backpointers to its inputs
//! and a closure that maps the output gradient to input gradients. Calling
//! [`Tensor::backward`] on a scalar walks the graph once in reverse
//! topological order and accumulates gradients on every tracked tensor.
//!
//! Tensors are immutable after forward construction except for the gradient
//! buffer and in-place parameter updates by the optimizer (which never happen
//! while a graph referencing the parameter is alive across the update).

mod adam;
mod checkpoint;
mod conv;
mod linalg;
mod loss;
mod nn;
mod ops;
mod param;
mod reduce;
mod shape_ops;

pub use adam::Adam;
pub use checkpoint::{
    load_checkpoint, load_entries, load_into, save_checkpoint, save_entries, CkptEntry,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use conv::{adaptive_avg_pool, bilinear_upsample, conv2d, global_average_pool};
pub use linalg::matmul;
pub use loss::{balanced_cross_entropy, class_balance_weights, smooth_l1};
pub use nn::{bilinear_sample, layer_norm, mlp_forward, Activation, Linear};
pub use ops::atan2;
pub use param::{ParamBuilder, ParamSet, Parameter};
pub use shape_ops::concat;

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// True unless inside a [`no_grad`] scope (per thread).
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Run `f` without recording any graph nodes. Used for inference passes.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    let out = f();
    GRAD_ENABLED.with(|c| c.set(prev));
    out
}

/// Gradient sink passed to backward closures: routes a node's output
/// gradient into per-parent accumulators keyed by tensor id.
pub(crate) struct GradSink<'a, T: Scalar> {
    slots: &'a RefCell<HashMap<u64, Vec<T>>>,
}

impl<T: Scalar> GradSink<'_, T> {
    /// Accumulate `contribution` into the gradient of `parent`.
    pub(crate) fn accum(&self, parent: &Tensor<T>, contribution: &[T]) {
        if !parent.inner.tracked {
            return;
        }
        debug_assert_eq!(contribution.len(), parent.numel());
        let mut slots = self.slots.borrow_mut();
        let slot = slots
            .entry(parent.inner.id)
            .or_insert_with(|| vec![T::ZERO; contribution.len()]);
        for (s, c) in slot.iter_mut().zip(contribution) {
            *s = *s + *c;
        }
    }

    /// Accumulate into a single flat position of `parent`'s gradient.
    pub(crate) fn accum_at(&self, parent: &Tensor<T>, flat: usize, contribution: T) {
        if !parent.inner.tracked {
            return;
        }
        let mut slots = self.slots.borrow_mut();
        let slot = slots
            .entry(parent.inner.id)
            .or_insert_with(|| vec![T::ZERO; parent.numel()]);
        slot[flat] = slot[flat] + contribution;
    }
}

type BackwardFn<T> = Box<dyn Fn(&Inner<T>, &[T], &GradSink<T>)>;

pub(crate) struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    /// Participates in differentiation: set on trainable leaves, inherited
    /// by results of ops with at least one tracked input.
    tracked: bool,
    parents: Vec<Tensor<T>>,
    backward_fn: Option<BackwardFn<T>>,
}

/// Dense row-major tensor, cheaply clonable (shared buffer).
pub struct Tensor<T: Scalar = f64> {
    pub(crate) inner: Rc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("tracked", &self.inner.tracked)
            .field("data", &self.inner.data.borrow())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    fn leaf(data: Vec<T>, shape: Vec<usize>, tracked: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                tracked,
                parents: Vec::new(),
                backward_fn: None,
            }),
        }
    }

    /// Constant (non-differentiable) tensor from a flat row-major buffer.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "from_vec: shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Self::leaf(data, shape.to_vec(), false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(vec![T::ZERO; shape.iter().product()], shape.to_vec(), false)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::leaf(vec![value; shape.iter().product()], shape.to_vec(), false)
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(vec![value], vec![], false)
    }

    /// Gaussian-initialized tensor (mean 0, given std).
    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(rng.normal() * std)).collect();
        Self::leaf(data, shape.to_vec(), false)
    }

    /// Mark a leaf as trainable. Must be called before the tensor is used in
    /// any op.
    pub fn with_grad(self) -> Self {
        assert!(
            self.inner.parents.is_empty(),
            "with_grad is only valid on leaf tensors"
        );
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape: self.inner.shape.clone(),
                data: RefCell::new(self.inner.data.borrow().clone()),
                grad: RefCell::new(None),
                tracked: true,
                parents: Vec::new(),
                backward_fn: None,
            }),
        }
    }

    /// Non-tracked copy of this tensor's current values.
    pub fn detach(&self) -> Self {
        Self::leaf(
            self.inner.data.borrow().clone(),
            self.inner.shape.clone(),
            false,
        )
    }

    pub(crate) fn node(
        data: Vec<T>,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&Inner<T>, &[T], &GradSink<T>) + 'static,
    ) -> Self {
        let tracked = is_grad_enabled() && parents.iter().any(|p| p.inner.tracked);
        if !tracked {
            return Self::leaf(data, shape, false);
        }
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                tracked: true,
                parents,
                backward_fn: Some(Box::new(backward)),
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn is_tracked(&self) -> bool {
        self.inner.tracked
    }

    pub(crate) fn values(&self) -> std::cell::Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    /// Value of a scalar (or single-element) tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.data.borrow()[0]
    }

    pub fn value_at(&self, flat: usize) -> T {
        self.inner.data.borrow()[flat]
    }

    /// Accumulated gradient, if any backward pass reached this tensor.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn grad_or_zeros(&self) -> Vec<T> {
        self.grad().unwrap_or_else(|| vec![T::ZERO; self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Overwrite the raw buffer (optimizer updates, checkpoint loads).
    pub fn set_data(&self, data: &[T]) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(d.len(), data.len());
        d.copy_from_slice(data);
    }

    pub(crate) fn data_mut(&self) -> std::cell::RefMut<'_, Vec<T>> {
        self.inner.data.borrow_mut()
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate on every
    /// tracked tensor reachable from the loss; repeated calls without zeroing
    /// add up.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.shape().to_vec(),
            });
        }
        if !self.inner.tracked {
            // A constant loss has nothing to propagate to.
            return Ok(());
        }

        // Iterative post-order DFS: parents precede children in `order`.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: std::collections::HashSet<u64> = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.inner.id);
        while let Some((node, child_idx)) = stack.pop() {
            if child_idx < node.inner.parents.len() {
                let parent = node.inner.parents[child_idx].clone();
                stack.push((node, child_idx + 1));
                if parent.inner.tracked && visited.insert(parent.inner.id) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }

        let slots: RefCell<HashMap<u64, Vec<T>>> = RefCell::new(HashMap::new());
        slots.borrow_mut().insert(self.inner.id, vec![T::ONE]);
        let sink = GradSink { slots: &slots };

        for node in order.iter().rev() {
            let Some(g) = slots.borrow_mut().remove(&node.inner.id) else {
                continue;
            };
            if let Some(back) = &node.inner.backward_fn {
                back(&node.inner, &g, &sink);
            }
            // Flush into the persistent gradient buffer.
            let mut grad = node.inner.grad.borrow_mut();
            match grad.as_mut() {
                Some(existing) => {
                    for (e, gi) in existing.iter_mut().zip(&g) {
                        *e = *e + *gi;
                    }
                }
                None => *grad = Some(g),
            }
        }
        Ok(())
    }
}

/// f64 tensor used throughout the pipeline.
pub type Tensor64 = Tensor<f64>;
