//! Reverse-mode automatic differentiation over [`ndarray`] arrays.
//!
//! A [`Tensor`] wraps a shared, dynamically-shaped array plus an optional
//! gradient and the closure that propagates gradients to its parents. Ops
//! (see [`ops`], implemented as inherent methods) build the graph as a side
//! effect of the forward pass; [`Tensor::backward`] walks it once in reverse
//! topological order.
//!
//! Graphs are single-use: backward consumes the propagation closures, and
//! every training step builds a fresh graph.

mod gradcheck;
pub mod ops;

pub use gradcheck::max_gradient_error;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};

use crate::scalar::Scalar;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient tracking disabled on this thread.
///
/// Ops executed inside build no graph; useful for evaluation and for loss
/// re-computation in finite-difference checks.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

type BackwardFn<F> = Box<dyn Fn(&ArrayD<F>)>;

struct Node<F: Scalar> {
    value: ArrayD<F>,
    grad: Option<ArrayD<F>>,
    requires_grad: bool,
    parents: Vec<Tensor<F>>,
    backward: Option<BackwardFn<F>>,
}

/// A node in the autodiff graph. Cloning is cheap and aliases the same node.
pub struct Tensor<F: Scalar> {
    node: Rc<RefCell<Node<F>>>,
}

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<F: Scalar> Tensor<F> {
    /// Constant leaf: participates in ops but receives no gradient.
    pub fn new(value: ArrayD<F>) -> Self {
        Self::leaf(value, false)
    }

    /// Trainable leaf: gradients accumulate here across backward calls.
    pub fn param(value: ArrayD<F>) -> Self {
        Self::leaf(value, true)
    }

    fn leaf(value: ArrayD<F>, requires_grad: bool) -> Self {
        Tensor {
            node: Rc::new(RefCell::new(Node {
                value,
                grad: None,
                requires_grad,
                parents: Vec::new(),
                backward: None,
            })),
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Self {
        Self::new(ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/data length mismatch"))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn scalar(v: F) -> Self {
        Self::new(ArrayD::from_elem(IxDyn(&[]), v))
    }

    /// Result of an op. Tracks gradients only when tracking is enabled and
    /// some parent needs them; otherwise degenerates to a constant leaf.
    pub(crate) fn from_op(
        value: ArrayD<F>,
        parents: Vec<Tensor<F>>,
        backward: BackwardFn<F>,
    ) -> Self {
        let mut parents: Vec<Tensor<F>> = parents
            .into_iter()
            .filter(|p| p.requires_grad())
            .collect();
        if !grad_enabled() || parents.is_empty() {
            return Self::leaf(value, false);
        }
        parents.shrink_to_fit();
        Tensor {
            node: Rc::new(RefCell::new(Node {
                value,
                grad: None,
                requires_grad: true,
                parents,
                backward: Some(backward),
            })),
        }
    }

    fn id(&self) -> usize {
        Rc::as_ptr(&self.node) as usize
    }

    pub fn value(&self) -> Ref<'_, ArrayD<F>> {
        Ref::map(self.node.borrow(), |n| &n.value)
    }

    pub fn array(&self) -> ArrayD<F> {
        self.node.borrow().value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node.borrow().value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.node.borrow().value.len()
    }

    /// Extracts the single element of a scalar (or one-element) tensor.
    pub fn item(&self) -> F {
        let n = self.node.borrow();
        assert_eq!(n.value.len(), 1, "item() on tensor with {} elements", n.value.len());
        *n.value.iter().next().unwrap()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.borrow().requires_grad
    }

    pub fn grad(&self) -> Option<ArrayD<F>> {
        self.node.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.node.borrow_mut().grad = None;
    }

    /// Replaces the stored value in place; shape must not change.
    pub fn set_value(&self, value: ArrayD<F>) {
        let mut n = self.node.borrow_mut();
        assert_eq!(n.value.shape(), value.shape(), "set_value changes shape");
        n.value = value;
    }

    /// Mutates the stored value in place (optimizer steps, perturbations).
    pub fn with_value_mut(&self, f: impl FnOnce(&mut ArrayD<F>)) {
        f(&mut self.node.borrow_mut().value)
    }

    /// A constant leaf sharing this tensor's current value.
    pub fn detach(&self) -> Tensor<F> {
        Tensor::new(self.array())
    }

    pub(crate) fn accumulate(&self, g: &ArrayD<F>) {
        let mut n = self.node.borrow_mut();
        if !n.requires_grad {
            return;
        }
        debug_assert_eq!(g.shape(), n.value.shape(), "gradient shape mismatch");
        match &mut n.grad {
            Some(acc) => *acc += g,
            None => n.grad = Some(g.clone()),
        }
    }

    /// Backpropagates from a scalar output, seeding its gradient with one.
    ///
    /// Panics when called on a non-scalar tensor. Intermediate gradients are
    /// dropped as soon as they have been propagated; only leaves keep theirs.
    pub fn backward(&self) {
        assert_eq!(
            self.numel(),
            1,
            "backward() requires a scalar output, got shape {:?}",
            self.shape()
        );
        let topo = self.topo_order();
        {
            let mut n = self.node.borrow_mut();
            let ones = ArrayD::from_elem(n.value.raw_dim(), F::one());
            n.grad = Some(ones);
        }
        for t in topo.iter().rev() {
            let (grad, backward) = {
                let mut n = t.node.borrow_mut();
                (n.grad.clone(), n.backward.take())
            };
            if let (Some(g), Some(f)) = (grad, backward) {
                f(&g);
                t.node.borrow_mut().grad = None;
            }
        }
    }

    /// Post-order over the gradient-tracking subgraph (parents first).
    fn topo_order(&self) -> Vec<Tensor<F>> {
        enum Frame<F: Scalar> {
            Enter(Tensor<F>),
            Exit(Tensor<F>),
        }
        let mut topo = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack = vec![Frame::Enter(self.clone())];
        while let Some(frame) = stack.pop() {
            match frame {
                Frame::Enter(t) => {
                    if !visited.insert(t.id()) {
                        continue;
                    }
                    stack.push(Frame::Exit(t.clone()));
                    for p in t.node.borrow().parents.iter() {
                        if !visited.contains(&p.id()) {
                            stack.push(Frame::Enter(p.clone()));
                        }
                    }
                }
                Frame::Exit(t) => topo.push(t),
            }
        }
        topo
    }
}

impl<F: Scalar> std::fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.node.borrow();
        f.debug_struct("Tensor")
            .field("shape", &n.value.shape())
            .field("requires_grad", &n.requires_grad)
            .finish()
    }
}
