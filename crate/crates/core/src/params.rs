//! Named parameter storage shared by every model.
//!
//! Networks hold [`ParamId`]s into a [`ParamStore`]; a forward pass binds the
//! store into a graph once and looks up the resulting [`Var`]s.

use dpn_tensor::{Graph, Tensor, Var};
use rand::Rng;

use crate::error::{DpnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Registers every parameter as a trainable leaf of `g`.
    pub fn bind(&self, g: &Graph) -> Bound {
        Bound {
            vars: self.values.iter().map(|t| g.param(t.clone())).collect(),
        }
    }

    /// Registers every parameter as a constant (no gradients flow to it).
    pub fn bind_frozen(&self, g: &Graph) -> Bound {
        Bound {
            vars: self.values.iter().map(|t| g.constant(t.clone())).collect(),
        }
    }

    /// Overwrites values from `(name, tensor)` pairs, requiring that names,
    /// order and shapes match exactly.
    pub fn load(&mut self, blocks: Vec<(String, Tensor)>) -> Result<()> {
        if blocks.len() != self.values.len() {
            return Err(DpnError::Config(format!(
                "parameter count mismatch: model has {}, file has {}",
                self.values.len(),
                blocks.len()
            )));
        }
        for (i, (name, t)) in blocks.into_iter().enumerate() {
            if name != self.names[i] {
                return Err(DpnError::Config(format!(
                    "parameter {i}: expected `{}`, found `{name}`",
                    self.names[i]
                )));
            }
            if t.shape() != self.values[i].shape() {
                return Err(DpnError::shape(name, self.values[i].shape(), t.shape()));
            }
            self.values[i] = t;
        }
        Ok(())
    }
}

/// A [`ParamStore`] bound into one graph.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights.
pub fn fan_in_uniform(rng: &mut impl Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}
