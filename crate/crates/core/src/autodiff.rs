//! Reverse-mode automatic differentiation.
//!
//! A [`Var`] is a reference-counted graph node holding a value tensor. Ops on
//! vars record their parents and a backward closure while gradient recording
//! is enabled and at least one input requires a gradient; otherwise they
//! produce plain constants and intermediate values are freed as soon as they
//! go out of scope. Node ids are handed out in execution order, so sorting the
//! nodes reachable from a loss by id yields the [`Tape`].

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|n| {
        let id = n.get();
        n.set(id + 1);
        id
    })
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Runs `f` with gradient recording disabled on this thread.
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

/// Maps the output gradient to one optional gradient per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Real> {
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

impl<T: Real> Drop for Node<T> {
    // Unrolled disparity recurrences build long parent chains; drop them
    // iteratively so the default recursive drop cannot exhaust the stack.
    fn drop(&mut self) {
        let mut stack = std::mem::take(&mut self.parents);
        while let Some(var) = stack.pop() {
            if let Ok(mut node) = Rc::try_unwrap(var.0) {
                stack.append(&mut node.parents);
            }
        }
    }
}

#[derive(Clone)]
pub struct Var<T: Real>(Rc<Node<T>>);

impl<T: Real> Var<T> {
    /// A leaf that never receives a gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    /// A leaf whose gradient is collected by [`Var::backward`].
    pub fn parameter(value: Tensor<T>) -> Self {
        Self::leaf(value, true)
    }

    fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Output of an op. The backward closure is kept only when recording.
    pub(crate) fn from_op(
        value: Tensor<T>,
        parents: &[&Var<T>],
        backward: impl Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Self {
        debug_assert!(value.all_finite(), "non-finite op output");
        let record = is_grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !record {
            return Self::constant(value);
        }
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: true,
            parents: parents.iter().map(|&p| p.clone()).collect(),
            backward: Some(Box::new(backward)),
        }))
    }

    pub(crate) fn records(parents: &[&Var<T>]) -> bool {
        is_grad_enabled() && parents.iter().any(|p| p.requires_grad())
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    /// Back-propagates from a scalar loss.
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.value().numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, shape is {:?}", self.shape()),
            ));
        }
        let tape = Tape::record(self);
        Ok(tape.backward(Tensor::full(self.shape(), T::one())))
    }
}

impl<T: Real> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id())
            .field("requires_grad", &self.requires_grad())
            .field("value", self.value())
            .finish()
    }
}

/// Gradient-requiring nodes reachable from a root, in execution order.
pub struct Tape<T: Real> {
    nodes: Vec<Var<T>>,
}

impl<T: Real> Tape<T> {
    pub fn record(root: &Var<T>) -> Self {
        let mut nodes = Vec::new();
        if root.requires_grad() {
            let mut seen = HashSet::new();
            let mut stack = vec![root.clone()];
            seen.insert(root.id());
            while let Some(var) = stack.pop() {
                for parent in &var.0.parents {
                    if parent.requires_grad() && seen.insert(parent.id()) {
                        stack.push(parent.clone());
                    }
                }
                nodes.push(var);
            }
        }
        nodes.sort_by_key(Var::id);
        Tape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.nodes.iter().map(Var::id).collect()
    }

    /// Parent ids of the node at `index`, for order checks.
    pub fn parent_ids(&self, index: usize) -> Vec<u64> {
        self.nodes[index].0.parents.iter().map(Var::id).collect()
    }

    /// Runs every backward rule once, last node first, starting from `seed`
    /// as the gradient of the final node. Returns leaf gradients.
    pub fn backward(&self, seed: Tensor<T>) -> Gradients<T> {
        let mut pending: HashMap<u64, Tensor<T>> = HashMap::new();
        let mut leaves = HashMap::new();
        if let Some(last) = self.nodes.last() {
            pending.insert(last.id(), seed);
        }
        for var in self.nodes.iter().rev() {
            let Some(grad) = pending.remove(&var.id()) else {
                continue;
            };
            let node = &var.0;
            let Some(backward) = &node.backward else {
                leaves.insert(node.id, grad);
                continue;
            };
            let parent_grads = backward(&grad);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (parent, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(g.shape(), parent.shape(), "gradient shape");
                match pending.get_mut(&parent.id()) {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += *b;
                        }
                    }
                    None => {
                        pending.insert(parent.id(), g);
                    }
                }
            }
        }
        Gradients { by_id: leaves }
    }
}

/// Leaf gradients produced by a backward pass.
pub struct Gradients<T: Real> {
    by_id: HashMap<u64, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        self.by_id.get(&var.id())
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn sum_gradient_is_ones() {
        let x = Var::parameter(Tensor::<f64>::from_fn(&[2, 3], |i| i as f64 - 2.0));
        let loss = ops::sum(&x);
        let grads = loss.backward().unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_gradient_is_twice_input() {
        let x = Var::parameter(Tensor::<f64>::from_fn(&[5], |i| i as f64 * 0.5 - 1.0));
        let loss = ops::sum(&ops::mul(&x, &x).unwrap());
        let grads = loss.backward().unwrap();
        let expected: Vec<f64> = x.value().data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(grads.get(&x).unwrap().data(), expected.as_slice());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let x = Var::parameter(Tensor::<f64>::zeros(&[3]));
        assert!(x.backward().is_err());
    }

    #[test]
    fn unreachable_leaves_get_nothing() {
        let x = Var::parameter(Tensor::<f64>::ones(&[2]));
        let y = Var::parameter(Tensor::<f64>::ones(&[2]));
        let loss = ops::sum(&x);
        let grads = loss.backward().unwrap();
        assert!(grads.get(&x).is_some());
        assert!(grads.get(&y).is_none());
    }

    #[test]
    fn tape_is_topological_and_unique() {
        let x = Var::parameter(Tensor::<f64>::from_fn(&[4], |i| i as f64));
        let a = ops::tanh(&x);
        let b = ops::mul(&a, &x).unwrap();
        let c = ops::add(&b, &a).unwrap();
        let loss = ops::sum(&c);
        let tape = Tape::record(&loss);
        let ids = tape.ids();
        assert_eq!(ids.len(), 5);
        let unique: HashSet<_> = ids.iter().collect();
        assert_eq!(unique.len(), ids.len());
        for (i, id) in ids.iter().enumerate() {
            for parent in tape.parent_ids(i) {
                assert!(parent < *id);
                assert!(ids[..i].contains(&parent));
            }
        }
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Var::parameter(Tensor::<f64>::ones(&[3]));
        let y = no_grad(|| ops::scale(&x, 2.0));
        assert!(!y.requires_grad());
        assert!(is_grad_enabled());
    }

    #[test]
    fn long_chain_drops_without_overflow() {
        let x = Var::parameter(Tensor::<f32>::ones(&[1]));
        let mut y = x.clone();
        for _ in 0..200_000 {
            y = ops::scale(&y, 1.0);
        }
        drop(y);
    }
}
