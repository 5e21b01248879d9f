//! Named parameter collections.
//!
//! Every trainable tensor lives in a [`ParamStore`] under a unique dotted
//! name (`stage2.block1.attn.w_q`). Binding the store to a [`Tape`] yields
//! [`Bindings`], which the layer code resolves by name.

use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    /// Inserts a trainable `N(0, std²)` tensor.
    pub fn normal<R: Rng + ?Sized>(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut R) -> Result<()> {
        self.insert(name, Tensor::randn(shape.to_vec(), std, rng)?.with_requires_grad())
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<()> {
        self.insert(name, Tensor::full(shape.to_vec(), value)?.with_requires_grad())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Number of named tensors.
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total element count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Freezes or unfreezes every tensor whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (name, t) in self.tensors.iter_mut() {
            if name.starts_with(prefix) {
                t.set_requires_grad(trainable);
            }
        }
    }

    /// Records every tensor on `tape`.
    pub fn bind(&self, tape: &Tape) -> Bindings {
        Bindings {
            vars: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), tape.leaf(t)))
                .collect(),
        }
    }

    /// Adds the gradients from one backward pass into each tensor's accumulator.
    pub fn accumulate_grads(&mut self, bindings: &Bindings, grads: &Gradients) -> Result<()> {
        for (name, t) in self.tensors.iter_mut() {
            if !t.requires_grad() {
                continue;
            }
            if let Some(g) = bindings.vars.get(name).and_then(|&v| grads.get(v)) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    /// Bitwise equality of names, shapes and values.
    pub fn bit_eq(&self, other: &ParamStore) -> bool {
        self.len() == other.len()
            && self
                .tensors
                .iter()
                .zip(other.tensors.iter())
                .all(|((ka, a), (kb, b))| ka == kb && a.bit_eq(b))
    }
}

/// Name → [`Var`] map for one tape.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    vars: IndexMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn get_opt(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn insert(&mut self, name: impl Into<String>, v: Var) {
        self.vars.insert(name.into(), v);
    }
}
