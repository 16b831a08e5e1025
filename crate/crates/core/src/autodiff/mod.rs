//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation evaluates eagerly, stores its value on the tape and, when
//! any input requires a gradient, records a closure that maps the output
//! gradient onto its inputs. [`Tape::backward`] replays those closures in
//! reverse order.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub mod attention;
pub mod nn;
pub mod ops;

type BackwardFn<T> = Box<dyn Fn(&[T], &mut GradSink<T>)>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Recording of a single forward evaluation.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients in [`Tape::backward`].
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.leaf_shared(Rc::new(value), requires_grad)
    }

    pub fn leaf_shared(&self, value: Rc<Tensor<T>>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            backward: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// Records the result of an operation.
    ///
    /// `backward` receives the gradient of the output and accumulates into the
    /// inputs through the sink. It is dropped if no input requires a gradient.
    pub(crate) fn push<F>(&self, op: &'static str, value: Tensor<T>, inputs: &[Var<'_, T>], backward: F) -> Result<Var<'_, T>>
    where
        F: Fn(&[T], &mut GradSink<T>) + 'static,
    {
        value.ensure_finite(op)?;
        debug_assert!(inputs.iter().all(|v| std::ptr::eq(v.tape, self)), "{op}: inputs recorded on another tape");
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Gradients of a scalar output with respect to every recorded node.
    pub fn backward(&self, output: Var<'_, T>) -> Result<Grads<T>> {
        let n = output.value().len();
        if n != 1 {
            return Err(Error::shape("backward", "output element count", 1, n));
        }
        self.backward_with_seed(output, &Tensor::scalar(T::one()))
    }

    /// Vector-Jacobian product seeded with `seed` at `output`.
    pub fn backward_with_seed(&self, output: Var<'_, T>, seed: &Tensor<T>) -> Result<Grads<T>> {
        let nodes = self.nodes.borrow();
        let out_len = nodes[output.id].value.len();
        if seed.len() != out_len {
            return Err(Error::shape("backward", "seed element count", out_len, seed.len()));
        }
        let mut sink = GradSink {
            grads: (0..nodes.len()).map(|_| None).collect(),
            lens: nodes.iter().map(|n| n.value.len()).collect(),
            requires: nodes.iter().map(|n| n.requires_grad).collect(),
        };
        if !nodes[output.id].requires_grad {
            return Ok(Grads { grads: sink.grads });
        }
        sink.grads[output.id] = Some(seed.data().to_vec());
        for id in (0..=output.id).rev() {
            let Some(backward) = nodes[id].backward.as_ref() else {
                continue;
            };
            if let Some(g) = sink.grads[id].take() {
                backward(&g, &mut sink);
            }
        }
        for (g, node) in sink.grads.iter().zip(nodes.iter()) {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { op: "backward" });
                }
                debug_assert_eq!(g.len(), node.value.len());
            }
        }
        Ok(Grads { grads: sink.grads })
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }
}

/// Accumulator handed to backward closures.
pub struct GradSink<T> {
    grads: Vec<Option<Vec<T>>>,
    lens: Vec<usize>,
    requires: Vec<bool>,
}

impl<T: Scalar> GradSink<T> {
    /// Mutable gradient buffer of `var`, or `None` if it does not need one.
    pub fn grad_mut(&mut self, var: usize) -> Option<&mut [T]> {
        if !self.requires[var] {
            return None;
        }
        let len = self.lens[var];
        Some(self.grads[var].get_or_insert_with(|| vec![T::zero(); len]))
    }

    /// Adds `g` into the gradient of `var`.
    pub fn add(&mut self, var: usize, g: &[T]) {
        if let Some(acc) = self.grad_mut(var) {
            for (a, &b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    /// Removes the gradient buffer of `var` so it can be updated alongside another one.
    /// Must be handed back with [`GradSink::restore`].
    pub fn take(&mut self, var: usize) -> Option<Vec<T>> {
        if !self.requires[var] {
            return None;
        }
        let len = self.lens[var];
        Some(self.grads[var].take().unwrap_or_else(|| vec![T::zero(); len]))
    }

    pub fn restore(&mut self, var: usize, g: Vec<T>) {
        match self.grads[var].as_mut() {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
            None => self.grads[var] = Some(g),
        }
    }

    pub fn wants(&self, var: usize) -> bool {
        self.requires[var]
    }
}

/// Gradients produced by a backward pass.
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient of `var`, shaped like its value. Zero if it did not influence the output.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        let value = var.value();
        match &self.grads[var.id] {
            Some(g) => Tensor::from_parts(value.shape().to_vec(), g.clone()),
            None => Tensor::zeros(value.shape()),
        }
    }

    pub fn raw(&self, var: Var<'_, T>) -> Option<&[T]> {
        self.grads[var.id].as_deref()
    }
}
