//! Named parameter collections shared between graphs, the optimizer, and
//! checkpoints.

use std::collections::HashMap;

use super::graph::{Gradients, Graph, Var};
use super::real::Real;
use super::tensor::Tensor;
use super::NumericsError;

/// Index of a parameter within a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    /// Position in the store's insertion order; gradient sets returned as
    /// plain vectors align with it.
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors. Insertion order is part
/// of the contract: optimizer state and checkpoints align by it.
#[derive(Clone, Debug)]
pub struct ParamStore<F: Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    by_name: HashMap<String, usize>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<F>) -> Result<ParamId, NumericsError> {
        if self.by_name.contains_key(name) {
            return Err(NumericsError::DuplicateParam(name.to_string()));
        }
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.by_name.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_by_name(&self, name: &str) -> Result<ParamId, NumericsError> {
        self.by_name
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.tensors.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Total number of scalar values across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }
}

/// Parameters bound into one graph as trainable leaves, aligned by
/// [`ParamId`].
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Insert every parameter of `store` into `g` as a trainable leaf.
    pub fn bind<F: Real>(g: &mut Graph<F>, store: &ParamStore<F>) -> BoundParams {
        let vars = store
            .tensors
            .iter()
            .map(|t| g.param(t.clone()))
            .collect();
        BoundParams { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Collect one gradient tensor per parameter; a parameter that the loss
    /// never touched gets an all-zero gradient.
    pub fn collect_grads<F: Real>(
        &self,
        store: &ParamStore<F>,
        grads: &Gradients<F>,
    ) -> Vec<Tensor<F>> {
        self.vars
            .iter()
            .enumerate()
            .map(|(i, &v)| grads.get_or_zero(v, store.tensors[i].shape()))
            .collect()
    }
}

/// Element-wise sum of aligned gradient sets, accumulated in argument order.
pub fn sum_grad_sets<F: Real>(sets: Vec<Vec<Tensor<F>>>) -> Vec<Tensor<F>> {
    let mut it = sets.into_iter();
    let mut acc = it.next().expect("at least one gradient set");
    for set in it {
        for (a, b) in acc.iter_mut().zip(set.iter()) {
            a.add_assign(b);
        }
    }
    acc
}
