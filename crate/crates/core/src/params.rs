//! Named parameter storage and per-tape binding.

use std::ops::Index;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Optimizer group; encoder parameters train at a reduced learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<T>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor<T>) -> ParamId {
        self.params.push(Param { name: name.into(), group, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Record every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Binding {
        Binding { vars: self.params.iter().map(|p| tape.leaf(p.value.clone())).collect() }
    }

    /// Record every parameter as a constant (inference).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Binding {
        Binding { vars: self.params.iter().map(|p| tape.constant(p.value.clone())).collect() }
    }
}

/// Tape handles for each parameter of a store.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Handles in store order; lets callers substitute their own leaves.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Index<ParamId> for Binding {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// Parameter initializers driven by one seeded generator.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        use rand::SeedableRng;
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Normal with standard deviation `gain / sqrt(fan_in)`.
    pub fn normal<T: Scalar>(&mut self, rows: usize, cols: usize, gain: f64) -> Tensor<T> {
        let std = gain / (rows as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                T::lit(z * std)
            })
            .collect();
        Tensor::matrix(rows, cols, data).expect("positive dims")
    }

    pub fn uniform<T: Scalar>(&mut self, rows: usize, cols: usize, bound: f64) -> Tensor<T> {
        let data = (0..rows * cols).map(|_| T::lit(self.rng.random_range(-bound..=bound))).collect();
        Tensor::matrix(rows, cols, data).expect("positive dims")
    }
}
