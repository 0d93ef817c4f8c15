//! Named parameter store with paired gradient buffers.
//!
//! Parameters are flat `f32` buffers with an explicit shape, addressed by
//! name (`predictor.w1`, `policy.wq`, ...). Iteration order is insertion
//! order, which keeps optimizer updates and checkpoint layouts deterministic
//! run to run.

use crate::error::ModelError;
use std::collections::HashMap;

/// One named tensor: values plus an equally-shaped gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
    pub grads: Vec<f32>,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered collection of [`Param`]s.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore::default()
    }

    /// Inserts a tensor; fails if the name is taken or the buffer does not
    /// match the shape.
    pub fn insert(
        &mut self,
        name: &str,
        shape: &[usize],
        values: Vec<f32>,
    ) -> Result<(), ModelError> {
        if self.index.contains_key(name) {
            return Err(ModelError::InvalidConfig {
                what: format!("parameter `{name}` inserted twice"),
            });
        }
        let numel: usize = shape.iter().product();
        if values.len() != numel {
            return Err(ModelError::LengthMismatch {
                what: "parameter buffer",
                expected: numel,
                got: values.len(),
            });
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            grads: vec![0.0; numel],
            values,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param, ModelError> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| ModelError::MissingParameter {
                name: name.to_string(),
            })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param, ModelError> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i]),
            None => Err(ModelError::MissingParameter {
                name: name.to_string(),
            }),
        }
    }

    /// Values of a named tensor after checking its shape against `expect`.
    pub fn values(&self, name: &str, expect: &[usize]) -> Result<&[f32], ModelError> {
        let p = self.get(name)?;
        if p.shape != expect {
            return Err(ModelError::ParameterShape {
                name: name.to_string(),
                expected: expect.to_vec(),
                got: p.shape.clone(),
            });
        }
        Ok(&p.values)
    }

    /// Adds `delta` into the gradient accumulator of `name`.
    pub fn accumulate_grad(&mut self, name: &str, delta: &[f32]) -> Result<(), ModelError> {
        let p = self.get_mut(name)?;
        if delta.len() != p.grads.len() {
            return Err(ModelError::LengthMismatch {
                what: "gradient buffer",
                expected: p.grads.len(),
                got: delta.len(),
            });
        }
        for (g, d) in p.grads.iter_mut().zip(delta) {
            *g += *d;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grads.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Parameters in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_len(&self) -> usize {
        self.entries.iter().map(Param::numel).sum()
    }
}
