//! Computation graph and reverse-mode differentiation.
//!
//! Every [`Tensor4`] is a reference-counted node. Operations that see at least
//! one gradient-tracking input record a backward closure together with their
//! inputs; [`Tensor4::backward`] walks the recorded graph in reverse creation
//! order and accumulates gradients into the tracked leaves.

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::array::Array4;
use crate::error::{Result, TensorError};
use crate::shape::Shape4;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Maps the upstream gradient to one gradient per input (`None` for inputs
/// that do not track gradients).
pub(crate) type BackwardFn = Box<dyn Fn(&Array4, &[Tensor4]) -> Vec<Option<Array4>>>;

struct Node {
    id: u64,
    value: RefCell<Array4>,
    grad: RefCell<Option<Array4>>,
    requires_grad: bool,
    inputs: Vec<Tensor4>,
    backward: Option<BackwardFn>,
}

/// A rank-4 float64 tensor that may take part in a differentiable graph.
#[derive(Clone)]
pub struct Tensor4(Rc<Node>);

impl fmt::Debug for Tensor4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor4")
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .field("leaf", &self.is_leaf())
            .finish()
    }
}

/// Runs `f` without recording any graph; used for evaluation passes.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
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

/// True when an op over `inputs` has to record its backward pass.
pub(crate) fn needs_grad(inputs: &[&Tensor4]) -> bool {
    grad_enabled() && inputs.iter().any(|t| t.requires_grad())
}

impl Tensor4 {
    fn with_node(
        value: Array4,
        requires_grad: bool,
        inputs: Vec<Tensor4>,
        backward: Option<BackwardFn>,
    ) -> Self {
        Tensor4(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value: RefCell::new(value),
            grad: RefCell::new(None),
            requires_grad,
            inputs,
            backward,
        }))
    }

    /// A constant: no gradient is ever computed for it.
    pub fn constant(value: Array4) -> Self {
        Self::with_node(value, false, Vec::new(), None)
    }

    /// A trainable leaf whose gradient is accumulated by [`Tensor4::backward`].
    pub fn parameter(value: Array4) -> Self {
        Self::with_node(value, true, Vec::new(), None)
    }

    pub(crate) fn from_op(value: Array4, inputs: Vec<Tensor4>, backward: BackwardFn) -> Self {
        let refs: Vec<&Tensor4> = inputs.iter().collect();
        if needs_grad(&refs) {
            Self::with_node(value, true, inputs, Some(backward))
        } else {
            Self::constant(value)
        }
    }

    pub fn shape(&self) -> Shape4 {
        self.0.value.borrow().shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    pub fn value(&self) -> Ref<'_, Array4> {
        self.0.value.borrow()
    }

    /// Mutable access to the stored value, for optimizer updates and
    /// finite-difference probes. Only meaningful on leaves.
    pub fn value_mut(&self) -> RefMut<'_, Array4> {
        self.0.value.borrow_mut()
    }

    pub fn to_array(&self) -> Array4 {
        self.value().clone()
    }

    /// Value of a (1, 1, 1, 1) tensor.
    pub fn item(&self) -> Result<f64> {
        let v = self.value();
        if !v.shape().is_scalar() {
            return Err(TensorError::invalid(
                "item",
                format!("expected a scalar tensor, got {}", v.shape()),
            ));
        }
        Ok(v.data()[0])
    }

    pub fn grad(&self) -> Option<Ref<'_, Array4>> {
        Ref::filter_map(self.0.grad.borrow(), |g| g.as_ref()).ok()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Tensor4 {
        Tensor4::constant(self.to_array())
    }

    /// Identity of the underlying node.
    pub fn ptr_eq(&self, other: &Tensor4) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Back-propagates from this scalar, accumulating `d(self)/d(leaf)` into
    /// every gradient-tracking leaf reachable from it. Calling it twice adds
    /// the gradients twice.
    pub fn backward(&self) -> Result<()> {
        if !self.shape().is_scalar() {
            return Err(TensorError::invalid(
                "backward",
                format!("loss must have shape (1, 1, 1, 1), got {}", self.shape()),
            ));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Inputs are always created before their consumers, so descending id
        // order is a valid reverse topological order.
        let mut order: Vec<Tensor4> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        seen.insert(self.0.id);
        while let Some(t) = stack.pop() {
            for input in &t.0.inputs {
                if input.requires_grad() && seen.insert(input.0.id) {
                    stack.push(input.clone());
                }
            }
            order.push(t);
        }
        order.sort_by(|a, b| b.0.id.cmp(&a.0.id));

        let mut pending: HashMap<u64, Array4> = HashMap::new();
        pending.insert(self.0.id, Array4::scalar(1.0));

        for node in &order {
            let Some(grad) = pending.remove(&node.0.id) else {
                continue;
            };
            match &node.0.backward {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.add_assign(&grad)?,
                        None => *slot = Some(grad),
                    }
                }
                Some(backward) => {
                    let input_grads = backward(&grad, &node.0.inputs);
                    debug_assert_eq!(input_grads.len(), node.0.inputs.len());
                    for (input, g) in node.0.inputs.iter().zip(input_grads) {
                        let Some(g) = g else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.shape(), input.shape());
                        match pending.get_mut(&input.0.id) {
                            Some(acc) => acc.add_assign(&g)?,
                            None => {
                                pending.insert(input.0.id, g);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl From<Array4> for Tensor4 {
    fn from(value: Array4) -> Self {
        Tensor4::constant(value)
    }
}
