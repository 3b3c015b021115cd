//! Reverse-mode differentiation tape.
//!
//! Operations append nodes holding the forward value plus a backward rule.
//! Insertion order is a topological order by construction, so `backward`
//! replays the tape once in reverse. A tape is confined to one logical
//! thread of execution.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Backward rule: given the output gradient, output value, and parent
/// values, produce one gradient tensor per parent.
pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&Tensor<T>, &Tensor<T>, &[&Tensor<T>]) -> Vec<Tensor<T>>>;

struct Node<T: Scalar> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    /// True when a `requires_grad` leaf is reachable below this node.
    needs_grad: bool,
}

/// Recording tape; owns every intermediate tensor of a forward pass.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
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

    /// Enters a leaf tensor. Only leaves with `requires_grad` retain their
    /// gradient after `backward`.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let id = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                value,
                grad: None,
                parents: Vec::new(),
                backward: None,
                needs_grad: requires_grad,
            });
            nodes.len() - 1
        };
        Var { tape: self, id }
    }

    pub(crate) fn push(
        &self,
        value: Tensor<T>,
        parents: Vec<usize>,
        backward: BackwardFn<T>,
    ) -> Var<'_, T> {
        let id = {
            let mut nodes = self.nodes.borrow_mut();
            let needs_grad = parents.iter().any(|&p| nodes[p].needs_grad);
            nodes.push(Node {
                value,
                grad: None,
                parents,
                backward: Some(backward),
                needs_grad,
            });
            nodes.len() - 1
        };
        Var { tape: self, id }
    }

    pub(crate) fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn with_values<R>(
        &self,
        ids: &[usize],
        f: impl FnOnce(&[&Tensor<T>]) -> R,
    ) -> R {
        let nodes = self.nodes.borrow();
        let vals: Vec<&Tensor<T>> = ids.iter().map(|&i| &nodes[i].value).collect();
        f(&vals)
    }

    /// Accumulates gradients for every `requires_grad` leaf reachable from
    /// `loss`. Repeated calls keep accumulating (backward is additive).
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        {
            let l = &mut nodes[loss.id];
            if !l.value.is_scalar() {
                return Err(TensorError::NonScalarLoss {
                    shape: l.value.shape().to_vec(),
                });
            }
            let seed = Tensor::full(l.value.shape(), T::one());
            match &mut l.grad {
                Some(g) => g.accumulate(&seed),
                None => l.grad = Some(seed),
            }
        }
        for i in (0..=loss.id).rev() {
            if nodes[i].grad.is_none() {
                continue;
            }
            if nodes[i].backward.is_none() {
                continue; // leaf: gradient is retained
            }
            if !nodes[i].needs_grad {
                nodes[i].grad = None;
                continue;
            }
            let (contribs, parents) = {
                let node = &nodes[i];
                let grad = node.grad.as_ref().expect("grad present");
                let pvals: Vec<&Tensor<T>> =
                    node.parents.iter().map(|&p| &nodes[p].value).collect();
                let f = node.backward.as_ref().expect("backward present");
                (f(grad, &node.value, &pvals), node.parents.clone())
            };
            debug_assert_eq!(contribs.len(), parents.len());
            for (p, c) in parents.into_iter().zip(contribs) {
                if !nodes[p].needs_grad {
                    continue;
                }
                debug_assert_eq!(c.shape(), nodes[p].value.shape());
                match &mut nodes[p].grad {
                    Some(g) => g.accumulate(&c),
                    None => nodes[p].grad = Some(c),
                }
            }
            // Interior gradients are dropped once consumed to bound memory.
            nodes[i].grad = None;
        }
        Ok(())
    }
}

/// Handle to a tensor recorded on a tape.
pub struct Var<'t, T: Scalar> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<'t, T: Scalar> Clone for Var<'t, T> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<'t, T: Scalar> Copy for Var<'t, T> {}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |v| v.shape().to_vec())
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.with_value(self.id, |v| v.clone())
    }

    pub fn scalar_value(&self) -> T {
        self.tape.with_value(self.id, |v| v.scalar_value())
    }

    /// Accumulated gradient; zeros when the tensor was never reached.
    pub fn grad(&self) -> Tensor<T> {
        let nodes = self.tape.nodes.borrow();
        match &nodes[self.id].grad {
            Some(g) => g.clone(),
            None => Tensor::zeros(nodes[self.id].value.shape()),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64_slice(&[2], &[1.0, 2.0]).unwrap(), true);
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn linear_loss_gradient() {
        // loss = sum(w * x), w = [1,2], x = [3,4] -> grad w = [3,4]
        let tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::from_f64_slice(&[2], &[1.0, 2.0]).unwrap(), true);
        let x = tape.leaf(Tensor::from_f64_slice(&[2], &[3.0, 4.0]).unwrap(), false);
        let loss = w.mul(x).unwrap().reduce_sum(&[0]).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(w.grad().data(), &[3.0, 4.0]);
        assert_eq!(x.grad().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_is_additive() {
        let tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::from_f64_slice(&[2], &[1.5, -2.0]).unwrap(), true);
        let l1 = w.mul(w).unwrap().reduce_sum(&[0]).unwrap();
        let l2 = w.mul_scalar(3.0).unwrap().reduce_sum(&[0]).unwrap();
        tape.backward(l1).unwrap();
        tape.backward(l2).unwrap();
        let g = w.grad();

        let tape2 = Tape::<f64>::new();
        let w2 = tape2.leaf(Tensor::from_f64_slice(&[2], &[1.5, -2.0]).unwrap(), true);
        let a = w2.mul(w2).unwrap().reduce_sum(&[0]).unwrap();
        let b = w2.mul_scalar(3.0).unwrap().reduce_sum(&[0]).unwrap();
        let total = a.add(b).unwrap();
        tape2.backward(total).unwrap();
        assert_eq!(g.data(), w2.grad().data());
    }

    #[test]
    fn min_routes_gradient_to_winner() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::scalar(1.0), true);
        let b = tape.leaf(Tensor::scalar(2.0), true);
        let loss = a.emin(b).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(a.grad().data(), &[1.0]);
        assert_eq!(b.grad().data(), &[0.0]);
    }

    #[test]
    fn unreachable_tensor_grad_is_zero() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::scalar(1.0), true);
        let b = tape.leaf(Tensor::scalar(5.0), true);
        let loss = a.mul_scalar(2.0).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(b.grad().data(), &[0.0]);
        assert_eq!(a.grad().data(), &[2.0]);
    }
}
