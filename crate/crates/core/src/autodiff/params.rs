use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameters with their gradient buffers and AdamW moments.
///
/// Every parameter owns exactly one gradient buffer and one pair of moment
/// buffers of identical shape, all zero at registration.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    index: HashMap<String, ParamId>,
    pub(crate) values: Vec<Tensor<T>>,
    pub(crate) grads: Vec<Tensor<T>>,
    pub(crate) m: Vec<Tensor<T>>,
    pub(crate) v: Vec<Tensor<T>>,
    pub(crate) step: u64,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            index: HashMap::new(),
            values: Vec::new(),
            grads: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.values.len());
        let shape = value.shape().to_vec();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        self.grads.push(Tensor::zeros(&shape));
        self.m.push(Tensor::zeros(&shape));
        self.v.push(Tensor::zeros(&shape));
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.grads[id.0]
    }

    pub fn moments(&self, id: ParamId) -> (&Tensor<T>, &Tensor<T>) {
        (&self.m[id.0], &self.v[id.0])
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Fails with the offending parameter name if any gradient is NaN or infinite.
    pub fn check_grads_finite(&self) -> Result<()> {
        for (i, g) in self.grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite gradient for parameter `{}`",
                    self.names[i]
                )));
            }
        }
        Ok(())
    }

    pub fn check_values_finite(&self) -> Result<()> {
        for (i, p) in self.values.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite value for parameter `{}`",
                    self.names[i]
                )));
            }
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> T {
        self.grads.iter().map(Tensor::sum_sq).sum::<T>().sqrt()
    }

    /// Restores moments and step counter (used when resuming from a checkpoint).
    pub fn set_optimizer_state(&mut self, id: ParamId, m: Tensor<T>, v: Tensor<T>) -> Result<()> {
        let shape = self.values[id.0].shape();
        if m.shape() != shape || v.shape() != shape {
            return Err(Error::Shape(format!(
                "moment shape mismatch for `{}`",
                self.names[id.0]
            )));
        }
        self.m[id.0] = m;
        self.v[id.0] = v;
        Ok(())
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            index: self.index.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            grads: self.grads.iter().map(Tensor::cast).collect(),
            m: self.m.iter().map(Tensor::cast).collect(),
            v: self.v.iter().map(Tensor::cast).collect(),
            step: self.step,
        }
    }
}
