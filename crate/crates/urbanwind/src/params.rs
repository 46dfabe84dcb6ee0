//! Ordered registry of named model parameters.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// One learnable tensor. Normalization scale/shift vectors and biases carry
/// `decay: false` so decoupled weight decay skips them.
pub struct Param<E: Element> {
    pub name: String,
    pub value: Tensor<E>,
    pub decay: bool,
}

/// Deterministically ordered parameter list; iteration order is construction
/// order regardless of how the model is traversed later.
pub struct ParamRegistry<E: Element> {
    params: Vec<Param<E>>,
}

impl<E: Element> Default for ParamRegistry<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> ParamRegistry<E> {
    pub fn new() -> Self {
        ParamRegistry { params: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<E>, decay: bool) -> Result<usize> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter name {name}")));
        }
        self.params.push(Param { name, value, decay });
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param<E> {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param<E> {
        &mut self.params[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<E>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<E>> {
        self.params.iter_mut()
    }

    /// Total scalar count across all parameters.
    pub fn total_len(&self) -> u64 {
        self.params.iter().map(|p| p.value.len() as u64).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_names() {
        let mut reg = ParamRegistry::<f32>::new();
        reg.register("a.weight", Tensor::zeros([1, 1, 1, 1]), true).unwrap();
        assert!(reg.register("a.weight", Tensor::zeros([1, 1, 1, 1]), true).is_err());
        assert_eq!(reg.total_len(), 1);
    }
}
