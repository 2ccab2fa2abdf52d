//! Named trainable parameters and their binding onto a [`Tape`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use alloc::string::ToString;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

/// Ordered collection of uniquely named parameters.
///
/// Insertion order is the canonical order for checkpoints and optimizer
/// state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, usize>,
}

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Parameter {
                name,
                detail: "duplicate parameter name".into(),
            });
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value });
        Ok(ParamId(id))
    }

    /// Uniform Glorot initialisation for a `[fan_in × fan_out]` matrix.
    pub fn insert_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let limit = math::sqrt(6.0 / (fan_in + fan_out).max(1) as f64);
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        self.insert(name, Tensor::new(&[fan_in, fan_out], data)?)
    }

    /// `[rows × cols]` with i.i.d. `N(0, std²)` entries.
    pub fn insert_normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let dist = Normal::new(0.0, std).map_err(|e| Error::contract(e.to_string()))?;
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        self.insert(name, Tensor::new(&[rows, cols], data)?)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replace values from another store. Names and shapes must match
    /// exactly, in both directions.
    pub fn assign_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &self.params {
            let Some(&j) = other.by_name.get(&p.name) else {
                return Err(Error::Parameter {
                    name: p.name.clone(),
                    detail: "missing from source".into(),
                });
            };
            let src = &other.params[j].value;
            if src.shape() != p.value.shape() {
                return Err(Error::Parameter {
                    name: p.name.clone(),
                    detail: format!(
                        "shape mismatch: expected {:?}, found {:?}",
                        p.value.shape(),
                        src.shape()
                    ),
                });
            }
        }
        if let Some(extra) = other.params.iter().find(|p| !self.by_name.contains_key(&p.name)) {
            return Err(Error::Parameter {
                name: extra.name.clone(),
                detail: "unknown parameter".into(),
            });
        }
        for p in &mut self.params {
            p.value = other.params[other.by_name[&p.name]].value.clone();
        }
        Ok(())
    }

    /// Place every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.param(p.value.clone())).collect(),
        }
    }

    /// Place every parameter on `tape` as a constant (evaluation only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.constant(p.value.clone()))
                .collect(),
        }
    }

    /// Gradients for every parameter after a backward pass.
    pub fn grads(&self, tape: &Tape, bound: &Bound) -> Vec<Tensor> {
        bound.vars.iter().map(|&v| tape.grad(v)).collect()
    }
}

/// The tape variables of one [`ParamStore::bind`] call.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}
