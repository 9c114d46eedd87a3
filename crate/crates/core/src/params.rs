//! Named learnable matrices, kept off-tape between steps.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{Gradients, Tape, Tensor};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Matrix>,
    frozen: Vec<bool>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.frozen.push(false);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform weight matrix.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        self.add(name, Matrix::from_vec(rows, cols, data).expect("sized"))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Matrix) {
        debug_assert_eq!(self.values[id.0].shape(), value.shape());
        self.values[id.0] = value;
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    /// Frozen parameters are bound as constants and skipped by optimizers.
    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.frozen[id.0] = frozen;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Places every parameter on `tape` as a leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Binding<'t> {
        let tensors = self
            .values
            .iter()
            .zip(&self.frozen)
            .map(|(v, &frozen)| tape.leaf(v.clone(), !frozen))
            .collect();
        Binding { tensors }
    }

    /// Replaces values by name from another set; every name must exist with the same shape.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        for (name, value) in other.iter() {
            let id = self.find(name).ok_or_else(|| {
                Error::Validation(format!("checkpoint has unknown parameter `{name}`"))
            })?;
            if self.get(id).shape() != value.shape() {
                return Err(Error::Dimension {
                    op: "load parameter",
                    left: self.get(id).shape(),
                    right: value.shape(),
                });
            }
            self.values[id.0] = value.clone();
        }
        Ok(())
    }
}

/// Tape handles for a [`ParamSet`], valid for one forward/backward pass.
pub struct Binding<'t> {
    tensors: Vec<Tensor<'t>>,
}

impl<'t> Binding<'t> {
    pub fn get(&self, id: ParamId) -> Tensor<'t> {
        self.tensors[id.0]
    }

    /// Gradient for every parameter, in id order. Frozen parameters yield `None`.
    pub fn collect_grads(&self, grads: &Gradients) -> Vec<Option<Matrix>> {
        self.tensors
            .iter()
            .map(|t| {
                if t.requires_grad() {
                    grads.get(*t).cloned()
                } else {
                    None
                }
            })
            .collect()
    }
}
