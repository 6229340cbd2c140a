//! Named parameter collections.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Ordered, uniquely named parameter tensors plus an update counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    /// Number of optimizer updates applied so far.
    pub iteration: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::config(alloc::format!("duplicate parameter {name}")));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::config(alloc::format!("missing parameter {name}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::is_finite)
    }

    /// Total number of scalars.
    pub fn num_values(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    /// Inserts every parameter into `graph`, returning the nodes in store
    /// order. `trainable` selects gradient-tracking leaves or constants.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Result<Vec<Var>> {
        self.tensors()
            .map(|t| graph.leaf(t.clone(), trainable))
            .collect()
    }
}

/// `rows x cols` tensor uniform in `±sqrt(1 / fan_in)`.
pub fn uniform_init<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = libm::sqrt(1.0 / fan_in.max(1) as f64);
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized")
}
