use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Grads, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Ordered, named collection of trainable matrices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        assert!(self.index_of(name).is_none(), "duplicate parameter {name}");
        self.names.push(name.to_string());
        self.tensors.push(value);
    }

    /// Weight matrix (`out × in`) drawn from `U(-1/√in, 1/√in)`.
    pub fn insert_weight(&mut self, name: &str, out: usize, fan_in: usize, rng: &mut impl Rng) {
        self.insert(name, uniform_fan_in(out, fan_in, rng));
    }

    pub fn insert_bias(&mut self, name: &str, width: usize) {
        self.insert(name, Tensor::zeros(1, width));
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let i = self
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let i = self
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.tensors[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect()
    }

    /// Records every parameter as a trainable leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            names: self.names.clone(),
            vars: self.tensors.iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Records every parameter as a constant (inference only).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            names: self.names.clone(),
            vars: self
                .tensors
                .iter()
                .map(|t| tape.constant(t.clone()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// Parameters of a [`ParamStore`] recorded on one tape.
pub struct Bound<'t> {
    names: Vec<String>,
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, name: &str) -> Var<'t> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.vars[i]
    }

    /// Gradients in store order; parameters the loss never touched get zeros.
    pub fn grads(&self, g: &Grads) -> Vec<Tensor> {
        self.vars.iter().map(|v| g.get_or_zeros(*v)).collect()
    }
}

pub fn uniform_fan_in(rows: usize, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(rows, fan_in, |_, _| rng.gen_range(-bound..=bound))
}

/// Elementwise `acc += add` over aligned gradient lists.
pub fn accumulate(acc: &mut [Tensor], add: &[Tensor]) -> Result<()> {
    if acc.len() != add.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {} parameters",
            add.len(),
            acc.len()
        )));
    }
    for (a, b) in acc.iter_mut().zip(add) {
        if !a.same_shape(b) {
            return Err(Error::dim("gradient shape differs from parameter"));
        }
        a.add_assign(b);
    }
    Ok(())
}
