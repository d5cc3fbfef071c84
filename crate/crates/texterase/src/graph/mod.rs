//! Minimal reverse-mode automatic differentiation on dynamic-rank arrays.
//!
//! A [`Graph`] is a single-use tape: forward calls append nodes in
//! topological order, [`Graph::backward`] walks the tape once in reverse and
//! accumulates gradients. The engine is deliberately small — only the
//! operations the eraser and its losses need — and fully deterministic:
//! no threads, no hash-ordered iteration, identical inputs give bit-identical
//! outputs and gradients.
//!
//! The element type is generic over [`Scalar`] (`f32` for training, `f64`
//! for the finite-difference gradient checks in the test suite).

mod conv;
mod ops;
mod pool;
mod resize;
#[cfg(test)]
mod tests;

pub use conv::{ConvSpec, DeconvSpec};

pub mod check;

pub(crate) use resize::lerp_table;

use ndarray::{ArrayD, IxDyn};

/// Element types the tape can compute with.
pub trait Scalar:
    num_traits::Float
    + ndarray::LinalgScalar
    + std::ops::AddAssign
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Convert an `f64` constant into the tape's element type.
pub fn scalar<T: Scalar>(x: f64) -> T {
    T::from(x).expect("constant representable in scalar type")
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Gradient accumulator used during the backward pass.
pub struct Grads<T: Scalar> {
    slots: Vec<Option<ArrayD<T>>>,
}

impl<T: Scalar> Grads<T> {
    fn new(len: usize) -> Self {
        Grads {
            slots: vec![None; len],
        }
    }

    /// Add `contribution` to the gradient slot of node `id`.
    pub fn accum(&mut self, id: usize, contribution: ArrayD<T>) {
        match &mut self.slots[id] {
            Some(g) => *g += &contribution,
            slot => *slot = Some(contribution),
        }
    }
}

type BackwardFn<T> = Box<dyn Fn(&[ArrayD<T>], &ArrayD<T>, &mut Grads<T>)>;

/// Single-use forward/backward tape.
pub struct Graph<T: Scalar> {
    values: Vec<ArrayD<T>>,
    backward_fns: Vec<Option<BackwardFn<T>>>,
    needs_grad: Vec<bool>,
    retain: Vec<bool>,
    grads: Vec<Option<ArrayD<T>>>,
    grad_enabled: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            backward_fns: Vec::new(),
            needs_grad: Vec::new(),
            retain: Vec::new(),
            grads: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that skips recording backward closures (inference mode).
    pub fn inference() -> Self {
        let mut g = Self::new();
        g.grad_enabled = false;
        g
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Insert a differentiable leaf (parameter or probed input).
    pub fn leaf(&mut self, value: ArrayD<T>) -> Var {
        let needs = self.grad_enabled;
        self.push(value, None, needs)
    }

    /// Insert a non-differentiable input.
    pub fn constant(&mut self, value: ArrayD<T>) -> Var {
        self.push(value, None, false)
    }

    /// Keep the gradient of an interior node after `backward`.
    pub fn retain_grad(&mut self, v: Var) {
        self.retain[v.0] = true;
    }

    pub fn value(&self, v: Var) -> &ArrayD<T> {
        &self.values[v.0]
    }

    /// Value of a single-element (scalar) node.
    pub fn scalar_value(&self, v: Var) -> T {
        let val = &self.values[v.0];
        debug_assert_eq!(val.len(), 1, "scalar_value on non-scalar node");
        val.iter().next().copied().unwrap()
    }

    /// Gradient of `v` after [`Graph::backward`]; `None` if none flowed
    /// (or the node was an interior node without `retain_grad`).
    pub fn grad(&self, v: Var) -> Option<&ArrayD<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.needs_grad[v.0]
    }

    /// Number of nodes on the tape (diagnostics).
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: ArrayD<T>, backward: Option<BackwardFn<T>>, needs: bool) -> Var {
        self.values.push(value);
        self.backward_fns.push(if needs { backward } else { None });
        self.needs_grad.push(needs);
        self.retain.push(false);
        Var(self.values.len() - 1)
    }

    /// Record an op node. The backward closure is dropped when no
    /// differentiable parent feeds the op.
    pub(crate) fn push_op(
        &mut self,
        value: ArrayD<T>,
        parents: &[Var],
        backward: BackwardFn<T>,
    ) -> Var {
        let needs = self.grad_enabled && parents.iter().any(|p| self.needs_grad[p.0]);
        self.push(value, Some(backward), needs)
    }

    /// Reverse pass from a scalar loss node. Gradients of leaves (and of
    /// interior nodes marked with [`Graph::retain_grad`]) are kept and can
    /// be read with [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) {
        assert!(self.grad_enabled, "backward on an inference tape");
        assert_eq!(
            self.values[loss.0].len(),
            1,
            "backward requires a scalar loss node"
        );
        self.grads = vec![None; self.values.len()];
        let mut work = Grads::new(self.values.len());
        work.slots[loss.0] = Some(ArrayD::ones(IxDyn(self.values[loss.0].shape())));
        for id in (0..=loss.0).rev() {
            if !self.needs_grad[id] {
                work.slots[id] = None;
                continue;
            }
            let Some(g) = work.slots[id].take() else {
                continue;
            };
            match &self.backward_fns[id] {
                Some(back) => {
                    back(&self.values, &g, &mut work);
                    if self.retain[id] {
                        self.grads[id] = Some(g);
                    }
                }
                // Leaf: keep the accumulated gradient.
                None => self.grads[id] = Some(g),
            }
        }
    }
}
