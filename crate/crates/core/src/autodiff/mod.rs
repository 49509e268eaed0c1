//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every op applied to its [`Var`]s during the forward
//! pass. [`Tape::backward`] replays the recorded backward rules in reverse
//! creation order, which is a valid reverse topological order because a node
//! can only be created after all of its inputs.
//!
//! Tapes are created per training step and dropped afterwards. They are not
//! `Send`; tensors are, so per-sample forward passes can run on worker
//! threads, each with its own tape.

mod nn;
mod ops;

pub mod gradcheck;

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Backward rule: maps the output gradient to one optional gradient per
/// parent (`None` where the parent does not require a gradient).
pub(crate) type BackwardFn = Box<dyn Fn(&[Real]) -> Vec<Option<Vec<Real>>>>;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Operation recorder for one forward/backward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<Real>>>>,
    backward_done: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            backward_done: Cell::new(false),
        }
    }

    /// Records a leaf. Leaves with `requires_grad` receive a gradient from
    /// [`Tape::backward`].
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let id = self.push_node(Node {
            value: Rc::new(value),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        });
        Var { tape: self, id }
    }

    /// A leaf that never requires a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    /// Variable trainable leaf shorthand.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        self.grads.borrow_mut().push(None);
        nodes.len() - 1
    }

    /// Records the result of an op. The backward rule is kept only when some
    /// parent requires a gradient.
    pub(crate) fn record(
        &self,
        value: impl Into<Rc<Tensor>>,
        parents: &[Var<'_>],
        backward: BackwardFn,
    ) -> Var<'_> {
        let value = value.into();
        debug_assert!(
            value.all_finite() || !parents.iter().all(|p| p.value().all_finite()),
            "op produced non-finite output from finite inputs"
        );
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let id = self.push_node(Node {
            value,
            requires_grad,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad { Some(backward) } else { None },
        });
        Var { tape: self, id }
    }

    /// Back-propagates from a scalar `loss`, populating gradients of every
    /// reachable leaf that requires one.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::ForeignVar);
        }
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        if loss_node.value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        if self.backward_done.replace(true) {
            return Err(Error::BackwardTwice);
        }
        let mut grads = self.grads.borrow_mut();
        if !loss_node.requires_grad {
            return Ok(());
        }
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let parent_grads = backward(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[pid].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.len(), nodes[pid].value.numel());
                match &mut grads[pid] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }

    /// Gradient accumulated into a leaf by the last backward pass.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let grads = self.grads.borrow();
        let nodes = self.nodes.borrow();
        grads[var.id]
            .as_ref()
            .map(|g| Tensor::new(nodes[var.id].value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Clears gradients so that backward may run again.
    pub fn reset(&self) {
        self.grads.borrow_mut().iter_mut().for_each(|g| *g = None);
        self.backward_done.set(false);
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    pub(crate) fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::ForeignVar)
        }
    }
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_all_ones_gradient() {
        let tape = Tape::new();
        let x = tape.param(Tensor::from_fn([2, 3, 4], |i| i as Real * 0.1 - 1.0));
        let loss = x.sum();
        tape.backward(loss).unwrap();
        let g = x.grad().unwrap();
        assert_eq!(g.shape(), &[2, 3, 4]);
        assert!(g.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn relu_gradient_is_step() {
        let tape = Tape::new();
        let x = tape.param(Tensor::new([2], vec![-1.0, 2.0]).unwrap());
        let loss = x.relu().sum();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_twice_without_reset_errors() {
        let tape = Tape::new();
        let x = tape.param(Tensor::ones([3]));
        let loss = x.sum();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::BackwardTwice)));
        tape.reset();
        tape.backward(loss).unwrap();
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.param(Tensor::ones([3]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn backward_rejects_var_from_other_tape() {
        let a = Tape::new();
        let b = Tape::new();
        let x = a.param(Tensor::ones([1]));
        assert!(matches!(b.backward(x), Err(Error::ForeignVar)));
    }

    #[test]
    fn gradients_accumulate_over_fan_out() {
        let tape = Tape::new();
        let x = tape.param(Tensor::new([2], vec![1.5, -0.5]).unwrap());
        // loss = sum(x*x + x) -> grad 2x + 1
        let loss = x.mul(x).unwrap().add(x).unwrap().sum();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[4.0, 0.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::ones([2]));
        let x = tape.param(Tensor::ones([2]));
        let loss = x.mul(c).unwrap().sum();
        tape.backward(loss).unwrap();
        assert!(c.grad().is_none());
        assert!(x.grad().is_some());
    }
}
