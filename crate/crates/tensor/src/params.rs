use std::sync::Arc;

use crate::scalar::Scalar;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Ordered, named parameter tensors of one network.
///
/// Tensors sit behind `Arc` so binding them to a tape is free; updates go
/// through [`ParamSet::tensor_mut`], which only copies when a tape still
/// holds a reference.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<T>>>,
}

/// Tape handles for every tensor of a [`ParamSet`], in the same order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, index: usize) -> Var {
        self.vars[index]
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    /// Registers a tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(Arc::new(tensor));
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn tensor(&self, index: usize) -> &Tensor<T> {
        &self.tensors[index]
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.tensors[index])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter().map(|t| t.as_ref()))
    }

    pub fn shapes(&self) -> Vec<Shape> {
        self.tensors.iter().map(|t| t.shape()).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Places every tensor on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Bound {
        Bound { vars: self.tensors.iter().map(|t| tape.leaf(Arc::clone(t), requires_grad)).collect() }
    }

    /// Gradient for each tensor of a bound set; unreached tensors get zeros.
    pub fn gradients(&self, grads: &mut Gradients<T>, bound: &Bound) -> Vec<Tensor<T>> {
        bound.vars.iter().zip(&self.tensors).map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape()))).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet { names: self.names.clone(), tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect() }
    }
}

impl<T: PartialEq> PartialEq for ParamSet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.tensors.len() == other.tensors.len() && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a == b)
    }
}
