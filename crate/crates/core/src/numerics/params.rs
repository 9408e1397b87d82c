use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Weights are drawn from the init distribution; biases start at zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters, each paired with a gradient buffer of the same shape.
///
/// Insertion order is stable and is the order used by checkpoints.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, kind: ParamKind, shape: &[usize]) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let id = self.values.len();
        self.names.push(name.to_string());
        self.kinds.push(kind);
        self.values.push(Tensor::zeros(shape));
        self.grads.push(Tensor::zeros(shape));
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.kinds[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    /// Looks a parameter up by name, for tests and tooling.
    pub fn by_name_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::invalid(format!("no parameter named {name}")))?;
        Ok(&mut self.values[id.0])
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::invalid(format!("no parameter named {name}")))?;
        Ok(&self.values[id.0])
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [Tensor] {
        &mut self.grads
    }

    pub(crate) fn grads_mut_vec(&mut self) -> &mut Vec<Tensor> {
        &mut self.grads
    }

    /// Split borrow: parameters read-only, gradients writable.
    pub fn parts_mut(&mut self) -> (&[Tensor], &mut [Tensor]) {
        (&self.values, &mut self.grads)
    }

    /// Split borrow: parameters writable, gradients read-only.
    pub fn update_parts(&mut self) -> (&mut [Tensor], &[Tensor]) {
        (&mut self.values, &self.grads)
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Fresh zero gradient buffers shaped like the parameters, for workers
    /// that accumulate outside the store.
    pub fn zeroed_grads(&self) -> Vec<Tensor> {
        self.values.iter().map(|v| Tensor::zeros(v.shape())).collect()
    }

    /// Adds externally accumulated gradients into the store's buffers.
    pub fn accumulate(&mut self, other: &[Tensor]) -> Result<()> {
        if other.len() != self.grads.len() {
            return Err(Error::invalid("gradient buffer count mismatch"));
        }
        for (g, o) in self.grads.iter_mut().zip(other) {
            if g.shape() != o.shape() {
                return Err(Error::Shape {
                    op: "accumulate",
                    left: g.shape().to_vec(),
                    right: o.shape().to_vec(),
                });
            }
            for (a, b) in g.data_mut().iter_mut().zip(o.data()) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    pub fn num_components(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}
