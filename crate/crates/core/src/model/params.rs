//! Named parameter storage and per-graph binding.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Graph, Scalar, Tensor, TensorData};

/// Handle into a [`ParamSet`]; stable for the lifetime of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    /// Position in `ParamSet::entries()`.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry<E> {
    pub name: String,
    pub value: TensorData<E>,
    pub trainable: bool,
}

/// Flat store of every tensor the model owns, trainable or frozen.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<E> {
    entries: Vec<ParamEntry<E>>,
}

impl<E: Scalar> ParamSet<E> {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: TensorData<E>, trainable: bool) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<E>] {
        &self.entries
    }

    pub fn value(&self, id: ParamId) -> &TensorData<E> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut TensorData<E> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.trainable)
            .map(|(i, _)| ParamId(i))
    }

    pub fn total_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Look up an entry index by name (checkpoint loading).
    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn convert<F: Scalar>(&self) -> ParamSet<F> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.map(|v| F::from_f64(v.as_f64())),
                    trainable: e.trainable,
                })
                .collect(),
        }
    }
}

/// Binds parameters to tensors for one forward pass.
///
/// In training mode each trainable parameter becomes a single graph leaf
/// (shared across all its uses, so gradients accumulate); frozen parameters
/// and everything in eval mode become constants outside the tape.
pub struct Ctx<'a, E: Scalar> {
    params: &'a ParamSet<E>,
    graph: Option<Graph<E>>,
    bound: RefCell<Vec<Option<Tensor<E>>>>,
}

impl<'a, E: Scalar> Ctx<'a, E> {
    pub fn train(params: &'a ParamSet<E>, graph: &Graph<E>) -> Self {
        Ctx {
            params,
            graph: Some(graph.clone()),
            bound: RefCell::new(vec![None; params.len()]),
        }
    }

    pub fn eval(params: &'a ParamSet<E>) -> Self {
        Ctx {
            params,
            graph: None,
            bound: RefCell::new(vec![None; params.len()]),
        }
    }

    /// The bound tensor for a parameter.
    pub fn p(&self, id: ParamId) -> Tensor<E> {
        let mut bound = self.bound.borrow_mut();
        if let Some(t) = &bound[id.0] {
            return t.clone();
        }
        let entry = &self.params.entries[id.0];
        let tensor = match (&self.graph, entry.trainable) {
            (Some(g), true) => g.leaf(entry.value.clone()),
            _ => Tensor::constant(entry.value.clone()),
        };
        bound[id.0] = Some(tensor.clone());
        tensor
    }

    /// Gradient of the loss w.r.t. a bound parameter, if it was used.
    pub fn grad<'g>(&self, grads: &'g Gradients<E>, id: ParamId) -> Option<&'g [E]> {
        let bound = self.bound.borrow();
        let t = bound[id.0].as_ref()?;
        grads.wrt(t)
    }

    /// Gradient that must exist; errors name the parameter.
    pub fn grad_required(&self, grads: &Gradients<E>, id: ParamId) -> Result<Vec<E>> {
        self.grad(grads, id)
            .map(|g| g.to_vec())
            .ok_or_else(|| {
                Error::NonFinite(format!(
                    "parameter {} received no gradient",
                    self.params.name(id)
                ))
            })
    }
}
