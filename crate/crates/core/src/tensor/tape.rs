use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Local vector-Jacobian product of one recorded op.
///
/// Called with the gradient of the op's output, the input values and the
/// output value; returns one gradient per input, in input order.
pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>) -> Vec<Tensor<T>>>;

struct Node<T> {
    op: &'static str,
    value: Rc<Tensor<T>>,
    tracked: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Append-only record of a define-by-run computation.
///
/// Node order is a topological order; [`Tape::backward`] visits nodes in
/// strict reverse insertion order. A tape is single-threaded. Build one per
/// training step (or per rollout) and drop it afterwards.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
        }
    }

    /// A tape that evaluates values only. Leaves are never tracked, so no
    /// backward closures are stored. Forward values are bit-identical to a
    /// recording tape because both run the same kernels.
    pub fn no_grad() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            op: "leaf",
            value: Rc::new(value),
            tracked: self.grad_enabled,
            parents: Vec::new(),
            backward: None,
        })
    }

    /// Constant input; receives no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            op: "constant",
            value: Rc::new(value),
            tracked: false,
            parents: Vec::new(),
            backward: None,
        })
    }

    pub fn scalar(&self, v: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(v))
    }

    pub fn vector(&self, v: &[T]) -> Var<'_, T> {
        self.constant(Tensor::vector(v.to_vec()))
    }

    /// Records an op. `backward` is stored only when at least one input is
    /// tracked; otherwise the node is a plain value.
    pub fn record<'t, F>(
        &'t self,
        op: &'static str,
        value: Tensor<T>,
        inputs: &[Var<'t, T>],
        backward: F,
    ) -> Var<'t, T>
    where
        F: Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>) -> Vec<Tensor<T>> + 'static,
    {
        debug_assert!(
            inputs.iter().all(|v| std::ptr::eq(v.tape, self)),
            "{op}: inputs recorded on a different tape"
        );
        let tracked = self.grad_enabled && inputs.iter().any(|v| v.is_tracked());
        let (parents, backward): (Vec<usize>, Option<BackwardFn<T>>) = if tracked {
            (
                inputs.iter().map(|v| v.id).collect(),
                Some(Box::new(backward)),
            )
        } else {
            (Vec::new(), None)
        };
        self.push(Node {
            op,
            value: Rc::new(value),
            tracked,
            parents,
            backward,
        })
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn is_tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    /// Reverse sweep from a scalar loss. Every tracked node reachable from
    /// `loss` gets `∂loss/∂node`; the result can be queried per [`Var`].
    ///
    /// The tape is left intact, so calling this twice yields the same
    /// gradients again.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        if !loss_node.value.is_scalar() {
            return Err(Error::NotScalar {
                shape: loss_node.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        if loss_node.tracked {
            grads[loss.id] = Some(Tensor::full(loss_node.value.shape(), T::one()));
        }
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.parents.iter().map(|&p| &*nodes[p].value).collect();
            let parent_grads = backward(&g, &inputs, &node.value);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                if !nodes[p].tracked {
                    continue;
                }
                if !pg.is_finite() {
                    return Err(Error::NonFiniteGradient { op: node.op });
                }
                debug_assert_eq!(pg.len(), nodes[p].value.len(), "grad size in {}", node.op);
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of its shape when `v` was unreachable.
    pub fn wrt(&self, v: Var<'_, T>) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(v.value().shape()),
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.value();
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &v.shape())
            .finish()
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.value().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> T {
        self.value().item()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.value().data().to_vec()
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.is_tracked(self.id)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant((*self.value()).clone())
    }
}
