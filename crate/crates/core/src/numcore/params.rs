use std::collections::HashMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, named collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces a tensor by name, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let &i = self
            .index
            .get(name)
            .ok_or_else(|| Error::Input(format!("unknown parameter {name}")))?;
        if self.tensors[i].shape() != value.shape() {
            return Err(Error::dim("set parameter", self.tensors[i].shape(), value.shape()));
        }
        self.tensors[i] = value;
        Ok(())
    }

    pub(crate) fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    /// Overwrites every value with a uniform draw from `[-scale, scale]`.
    pub fn init_uniform<R: Rng>(&mut self, rng: &mut R, scale: f64) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = rng.random_range(-scale..=scale);
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// SHA-256 over names, shapes and value bits.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Places every parameter on `tape` as a borrowed leaf.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.leaf_ref(t, trainable)).collect(),
        }
    }
}

impl ParamSet {
    /// Like [`ParamSet::bind`] but copies values, so the tape may outlive `self`.
    pub fn bind_owned(&self, tape: &mut Tape<'_>, trainable: bool) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone(), trainable)).collect(),
        }
    }
}

/// Tape handles for a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Collects per-parameter gradients after `Tape::backward`.
    pub fn gradients(&self, tape: &Tape<'_>) -> Gradients {
        Gradients(
            self.vars
                .iter()
                .map(|&v| {
                    tape.grad(v)
                        .map(<[f64]>::to_vec)
                        .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
                })
                .collect(),
        )
    }
}

/// Per-parameter gradient buffers, index-aligned with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Gradients(params.tensors.iter().map(|t| vec![0.0; t.len()]).collect())
    }

    pub fn accumulate(&mut self, other: &Gradients, weight: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += weight * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().flatten().for_each(|x| *x *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }
}
