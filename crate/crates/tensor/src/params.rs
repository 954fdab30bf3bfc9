//! Named learnable parameters and their accumulated gradients.

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Param<T>>,
}

/// Tape variables for every parameter of a store, valid for one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Routes parameter `id` through another variable of the same tape.
    pub fn replace(&mut self, id: ParamId, var: Var) {
        self.vars[id.0] = var;
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(TensorError::Contract(format!("duplicate parameter {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        let (idx, _) = self.entries.insert_full(name, Param { value, grad });
        Ok(ParamId(idx))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.entries[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.entries.get(name)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Places every parameter on `tape` as a gradient-receiving leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        let vars = self
            .entries
            .values()
            .map(|p| tape.param(p.value.clone()))
            .collect();
        Bound { vars }
    }

    /// Places every parameter on `tape` as a constant (inference).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        let vars = self
            .entries
            .values()
            .map(|p| tape.constant(p.value.clone()))
            .collect();
        Bound { vars }
    }

    /// Adds the tape's gradients for `bound` into the stored gradients.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, bound: &Bound) {
        for (param, &var) in self.entries.values_mut().zip(&bound.vars) {
            if let Some(g) = tape.grad(var) {
                for (acc, v) in param.grad.data_mut().iter_mut().zip(g.data()) {
                    *acc = *acc + *v;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn scale_grads(&mut self, s: T) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = *g * s);
        }
    }

    /// Replaces parameter values from named tensors. Every stored parameter
    /// must be present with an identical shape.
    pub fn load_named<U: Element>(&mut self, named: &[(String, Tensor<U>)]) -> Result<()> {
        if named.len() != self.entries.len() {
            return Err(TensorError::Checkpoint(format!(
                "checkpoint holds {} parameters, model expects {}",
                named.len(),
                self.entries.len()
            )));
        }
        for (name, t) in named {
            let Some(p) = self.entries.get_mut(name) else {
                return Err(TensorError::Checkpoint(format!("unexpected parameter {name}")));
            };
            if p.value.shape() != t.shape() {
                return Err(TensorError::Checkpoint(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.cast();
        }
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            grad: p.grad.cast(),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// He-normal initialisation for a weight with the given fan-in.
pub fn kaiming_normal<T: Element, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64_lossy(normal.sample(rng)))
}
