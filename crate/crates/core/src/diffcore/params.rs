use std::collections::BTreeMap;

use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub value: Tensor<S>,
    pub grad: Vec<S>,
}

/// Named parameters, iterated in lexicographic name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<S> {
    entries: BTreeMap<String, Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Contract(format!("parameter `{name}` defined twice")));
        }
        let grad = vec![S::zero(); value.numel()];
        self.entries.insert(name, Param { value, grad });
        Ok(())
    }

    /// Inserts a `rows × cols` matrix drawn uniformly from `±sqrt(6 / (rows + cols))`.
    pub fn insert_xavier(&mut self, name: &str, rows: usize, cols: usize, rng: &mut RngStream) -> Result<()> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| S::of((2.0 * rng.uniform_open() - 1.0) * bound))
            .collect();
        self.insert(name, Tensor::new(vec![rows, cols], data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape.to_vec()))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    pub fn param(&self, name: &str) -> Option<&Param<S>> {
        self.entries.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<S>> {
        self.entries.get_mut(name)
    }

    pub fn grad(&self, name: &str) -> Option<&[S]> {
        self.entries.get(name).map(|p| p.grad.as_slice())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<S>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<S>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = S::zero());
        }
    }

    /// Adds per-parameter gradients (e.g. from one sample's graph) into the store.
    pub fn accumulate_grads<'a>(&mut self, grads: impl IntoIterator<Item = (&'a String, &'a Vec<S>)>) -> Result<()> {
        for (name, g) in grads {
            let p = self
                .entries
                .get_mut(name)
                .ok_or_else(|| Error::MissingParam(name.clone()))?;
            if p.grad.len() != g.len() {
                return Err(Error::shape(format!("accumulate_grads({name})"), &[p.grad.len()], &[g.len()]));
            }
            p.grad.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b);
        }
        Ok(())
    }
}
