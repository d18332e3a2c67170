//! Dense row-major tensors with tape-free reverse-mode differentiation.
//!
//! Every [`Tensor`] produced by a differentiable op while gradients are
//! enabled keeps a reference to its inputs plus a closure computing the
//! vector-Jacobian product. [`Tensor::backward`] walks that graph in reverse
//! topological order and accumulates into the `grad` buffer of every leaf
//! tensor that was created with `requires_grad`.
//!
//! Gradients accumulate across repeated `backward` calls until
//! [`Tensor::zero_grad`] is called.

mod conv;
mod init;
pub mod io;
mod ops;
mod optim;
mod param;
mod scalar;

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use conv::{conv2d, pixel_shuffle, pixel_unshuffle, Padding};
pub use init::{xavier_bound, xavier_init};
pub use ops::{
    add, concat_channels, concat_cols, detokenize, leaky_relu, linear, matmul, matmul_bt, mean, mul,
    reshape,
    scale, slice_cols, softmax, sub, sum, tokens_of, DEFAULT_LRELU_SLOPE,
};
pub use optim::{adam_update, AdamConfig, AdamState};
pub use param::{ParamSet, Parameter};
pub use scalar::{DType, Scalar};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Disables graph recording on the current thread until dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

/// Turns off graph recording for the lifetime of the returned guard.
pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

type BackwardFn<S> = Box<dyn Fn(&[S], &[S]) -> Vec<Option<Vec<S>>> + Send + Sync>;

struct GradFn<S: Scalar> {
    name: &'static str,
    inputs: Vec<Tensor<S>>,
    /// Called with (output data, output grad); returns one optional grad per input.
    backward: BackwardFn<S>,
}

struct Node<S: Scalar> {
    id: usize,
    shape: Vec<usize>,
    data: Vec<S>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<S>>>,
    grad_fn: Option<GradFn<S>>,
}

/// Shared handle to an immutable dense tensor.
pub struct Tensor<S: Scalar = f32> {
    node: Arc<Node<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad);
        if let Some(g) = &self.node.grad_fn {
            d.field("grad_fn", &g.name);
        }
        if self.node.data.len() <= 16 {
            d.field("data", &self.node.data);
        }
        d.finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    fn from_node(node: Node<S>) -> Self {
        Tensor {
            node: Arc::new(node),
        }
    }

    /// Creates a constant (untracked) tensor.
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        Self::leaf(shape, data, false)
    }

    /// Creates a leaf tensor, optionally tracked for gradients.
    pub fn leaf(shape: &[usize], data: Vec<S>, requires_grad: bool) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        Ok(Self::from_node(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: shape.to_vec(),
            data,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn: None,
        }))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        Self::new(shape, vec![value; numel(shape)]).expect("consistent shape")
    }

    pub fn scalar(value: S) -> Self {
        Self::new(&[], vec![value]).expect("scalar")
    }

    /// Builds the result of a differentiable op. The graph edge is recorded
    /// only when recording is enabled and some input is tracked.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<S>,
        name: &'static str,
        inputs: Vec<Tensor<S>>,
        backward: impl Fn(&[S], &[S]) -> Vec<Option<Vec<S>>> + Send + Sync + 'static,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len(), "{name}: output size");
        let track = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        Self::from_node(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad: track,
            grad: Mutex::new(None),
            grad_fn: track.then(|| GradFn {
                name,
                inputs,
                backward: Box::new(backward),
            }),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    /// Process-unique identity of the underlying buffer; clones share it.
    pub fn id(&self) -> usize {
        self.node.id
    }

    pub fn data(&self) -> &[S] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.node.data.clone()
    }

    pub fn len(&self) -> usize {
        self.node.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    /// Same storage, detached from the graph, with the given tracking flag.
    pub fn detach_with_grad(&self, requires_grad: bool) -> Self {
        Self::leaf(&self.node.shape, self.node.data.clone(), requires_grad)
            .expect("existing shape is valid")
    }

    pub fn detach(&self) -> Self {
        self.detach_with_grad(false)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape());
        self.node.data[0]
    }

    /// Accumulated gradient of a leaf tensor, if any.
    pub fn grad(&self) -> Option<Vec<S>> {
        self.node.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock") = None;
    }

    /// Converts the element type (drops graph history).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .node
            .data
            .iter()
            .map(|v| T::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(T::nan()))
            .collect();
        Tensor::leaf(&self.node.shape, data, self.node.requires_grad).expect("same shape")
    }

    pub fn all_finite(&self) -> bool {
        self.node.data.iter().all(|v| v.is_finite())
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Leaf gradients accumulate on top of whatever is already stored.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::invalid(
                "backward on a tensor that does not require grad",
            ));
        }
        let order = self.topo_order();
        let mut grads: HashMap<usize, Vec<S>> = HashMap::new();
        grads.insert(self.node.id, vec![S::one()]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.node.id) else {
                continue;
            };
            match &t.node.grad_fn {
                None => {
                    let mut slot = t.node.grad.lock().expect("grad lock");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        None => *slot = Some(g),
                    }
                }
                Some(f) => {
                    let input_grads = (f.backward)(&t.node.data, &g);
                    debug_assert_eq!(input_grads.len(), f.inputs.len(), "{}", f.name);
                    for (inp, ig) in f.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !inp.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), inp.len(), "{} input grad size", f.name);
                        match grads.get_mut(&inp.node.id) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += *b),
                            None => {
                                grads.insert(inp.node.id, ig);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Tracked nodes reachable from `self`, inputs before consumers.
    fn topo_order(&self) -> Vec<Tensor<S>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor<S>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.node.id) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(f) = &t.node.grad_fn {
                for inp in &f.inputs {
                    if inp.requires_grad() && !visited.contains(&inp.node.id) {
                        stack.push((inp.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl<S: Scalar> Drop for Node<S> {
    // Long op chains would otherwise drop recursively.
    fn drop(&mut self) {
        let mut pending: Vec<Tensor<S>> = match self.grad_fn.take() {
            Some(f) => f.inputs,
            None => return,
        };
        while let Some(t) = pending.pop() {
            if let Ok(mut node) = Arc::try_unwrap(t.node) {
                if let Some(f) = node.grad_fn.take() {
                    pending.extend(f.inputs);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_length_must_agree() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let w = Tensor::<f64>::leaf(&[4], vec![1.0, -2.0, 3.0, 0.5], true).unwrap();
        sum(&w).backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let w = Tensor::<f64>::leaf(&[1], vec![3.0], true).unwrap();
        let loss = sum(&mul(&w, &w).unwrap());
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let w = Tensor::<f64>::leaf(&[2], vec![1.0, 2.0], true).unwrap();
        let loss = sum(&scale(&w, 3.0));
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![6.0, 6.0]);
        w.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn non_scalar_backward_is_an_error() {
        let w = Tensor::<f64>::leaf(&[2], vec![1.0, 2.0], true).unwrap();
        let y = scale(&w, 2.0);
        assert!(matches!(y.backward(), Err(Error::Shape(_))));
    }

    #[test]
    fn no_grad_skips_recording() {
        let w = Tensor::<f32>::leaf(&[2], vec![1.0, 2.0], true).unwrap();
        let y = {
            let _g = no_grad();
            scale(&w, 2.0)
        };
        assert!(!y.requires_grad());
        assert!(scale(&w, 2.0).requires_grad());
    }

    #[test]
    fn deep_chain_drops_without_overflow() {
        let mut x = Tensor::<f32>::leaf(&[1], vec![1.0], true).unwrap();
        for _ in 0..200_000 {
            x = scale(&x, 1.0);
        }
        drop(x);
    }
}
