use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Optimizer group a parameter belongs to; each group has its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Accumulated gradient. Cleared only by [`ParamStore::zero_grad`].
    pub grad: Tensor,
    pub group: ParamGroup,
}

/// Ordered, named parameter collection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its position.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup) -> usize {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
            group,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Records every parameter on `tape`, as gradient-receiving leaves when
    /// `trainable`, otherwise as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// Adds the gradients of `vars` (as returned by [`bind`](Self::bind)) into
    /// the parameters' gradient buffers.
    pub fn accumulate(&mut self, vars: &[Var], grads: &Gradients) {
        for (p, v) in self.params.iter_mut().zip(vars) {
            if let Some(g) = grads.raw(*v) {
                for (acc, x) in p.grad.data_mut().iter_mut().zip(g) {
                    *acc += x;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Replaces all values, validating names and shapes against the store.
    pub fn load_values(&mut self, records: &[(String, Tensor)]) -> Result<()> {
        if records.len() != self.params.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} parameters, model expects {}",
                records.len(),
                self.params.len()
            )));
        }
        for (p, (name, value)) in self.params.iter().zip(records) {
            if &p.name != name {
                return Err(Error::Validation(format!(
                    "parameter order mismatch: expected {}, found {name}",
                    p.name
                )));
            }
            if p.value.shape() != value.shape() {
                return Err(Error::shape(
                    "checkpoint load",
                    p.value.shape(),
                    value.shape(),
                ));
            }
        }
        for (p, (_, value)) in self.params.iter_mut().zip(records) {
            p.value = value.clone();
        }
        Ok(())
    }
}
