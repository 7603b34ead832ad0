use std::collections::HashMap;

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Index of a parameter inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Insertion-ordered collection of parameters. Order is part of the
/// contract: optimizer state, checkpoints and gradient reductions all follow
/// it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        let grad = Tensor::zeros(value.shape());
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.leaf(p.value.clone()))
                .collect(),
        }
    }

    /// Adds `∂loss/∂param` into each parameter's accumulator. Parameters the
    /// loss does not reach keep their current gradient.
    pub fn accumulate(&mut self, bound: &Bound<'_, T>, grads: &Gradients<T>) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.get(v) {
                p.grad.add_assign(g);
            }
        }
    }

    pub fn grad_norm(&self) -> T {
        self.params
            .iter()
            .flat_map(|p| p.grad.data().iter())
            .fold(T::zero(), |acc, &g| acc + g * g)
            .sqrt()
    }
}

/// Tape handles of a [`ParamSet`], in the same order.
#[derive(Clone)]
pub struct Bound<'t, T> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Real> Bound<'t, T> {
    pub fn get(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_backward_doubles_gradients() {
        let mut ps = ParamSet::new();
        let w = ps
            .insert("w", Tensor::vector(vec![0.3, -0.7, 1.1]))
            .unwrap();
        let tape = Tape::new();
        let b = ps.bind(&tape);
        let loss = b.get(w).tanh().square().sum();
        let g1 = tape.backward(loss).unwrap();
        ps.accumulate(&b, &g1);
        let once = ps.get(w).grad.clone();
        let g2 = tape.backward(loss).unwrap();
        ps.accumulate(&b, &g2);
        let twice = &ps.get(w).grad;
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn unreachable_parameter_keeps_zero_grad() {
        let mut ps = ParamSet::new();
        let a = ps.insert("a", Tensor::scalar(2.0)).unwrap();
        let b = ps.insert("b", Tensor::scalar(5.0)).unwrap();
        let tape = Tape::new();
        let bound = ps.bind(&tape);
        let loss = bound.get(a).square();
        let g = tape.backward(loss).unwrap();
        ps.accumulate(&bound, &g);
        assert_eq!(ps.get(a).grad.item(), 4.0);
        assert_eq!(ps.get(b).grad.item(), 0.0);
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut ps = ParamSet::<f64>::new();
        ps.insert("x", Tensor::scalar(1.0)).unwrap();
        assert!(ps.insert("x", Tensor::scalar(1.0)).is_err());
    }
}
