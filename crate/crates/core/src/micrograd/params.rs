use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Named parameters in insertion order, each paired with a gradient buffer of
/// the same shape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<Entry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.position(&name).is_some() {
            return Err(Error::DuplicateKey(name));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Entry { name, value, grad });
        Ok(())
    }

    /// Inserts a tensor with entries drawn from uniform(−1/√fan_in, 1/√fan_in).
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::new(shape, data)?)
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::NotFound(format!("parameter {name}")))
    }

    fn entry_mut(&mut self, name: &str) -> Result<&mut Entry> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::NotFound(format!("parameter {name}")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.entry(name)?.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        Ok(&mut self.entry_mut(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.entry(name)?.grad)
    }

    pub fn grad_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        Ok(&mut self.entry_mut(name)?.grad)
    }

    /// Adds `delta` into the gradient buffer of `name`.
    pub fn accumulate(&mut self, name: &str, delta: &Tensor) -> Result<()> {
        self.entry_mut(name)?.grad.add_assign(delta)
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    pub fn grads(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.grad))
    }

    /// Plain gradient descent: `θ ← θ − lr·∇θ`.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        for e in &mut self.entries {
            e.value.axpy(-lr, &e.grad)?;
            e.value.check_finite(&e.name)?;
        }
        Ok(())
    }

    pub(crate) fn value_data_mut(&mut self, index: usize) -> &mut [f64] {
        self.entries[index].value.data_mut()
    }

    pub(crate) fn grad_data(&self, index: usize) -> &[f64] {
        self.entries[index].grad.data()
    }
}
