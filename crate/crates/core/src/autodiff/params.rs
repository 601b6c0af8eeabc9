use indexmap::IndexMap;

use super::tape::{Gradients, Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Named, ordered collection of parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T: Real = f32> {
    tensors: IndexMap<String, Tensor<T>>,
}

/// Gradients keyed by parameter name.
pub type GradMap<T = f32> = ParamStore<T>;

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { tensors: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors.get_mut(name).ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.tensors.shift_remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect() }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Errors unless `other` has the same names, in order, with equal shapes.
    pub fn check_aligned(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::InvalidArgument(format!(
                "parameter sets differ in size: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.iter().zip(other.iter()) {
            if na != nb {
                return Err(Error::InvalidArgument(format!("parameter order differs: {na} vs {nb}")));
            }
            if ta.shape() != tb.shape() {
                return Err(Error::ShapeMismatch { op: "param align", left: ta.shape().to_vec(), right: tb.shape().to_vec() });
            }
        }
        Ok(())
    }

    /// Adds `other` elementwise (gradient accumulation).
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        self.check_aligned(other)?;
        for ((_, a), (_, b)) in self.tensors.iter_mut().zip(other.iter()) {
            a.add_assign(b);
        }
        Ok(())
    }

    /// l2 norm over every entry of every tensor.
    pub fn global_norm(&self) -> f64 {
        self.tensors.values().map(Tensor::sum_sq).sum::<f64>().sqrt()
    }

    /// Records every tensor as a trainable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound { vars: self.tensors.iter().map(|(k, v)| (k.clone(), tape.param(v.clone()))).collect() }
    }

    /// Records every tensor as a constant (no gradients).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound { vars: self.tensors.iter().map(|(k, v)| (k.clone(), tape.constant(v.clone()))).collect() }
    }
}

/// Parameters recorded on a tape.
pub struct Bound<'t, T: Real = f32> {
    vars: IndexMap<String, Var<'t, T>>,
}

impl<'t, T: Real> Bound<'t, T> {
    pub fn get(&self, name: &str) -> Result<Var<'t, T>> {
        self.vars.get(name).copied().ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    /// Per-parameter gradients; parameters not reached by the loss get zeros.
    pub fn grads(&self, g: &Gradients<T>) -> GradMap<T> {
        let mut out = ParamStore::new();
        for (k, v) in &self.vars {
            out.insert(k.clone(), g.wrt(*v));
        }
        out
    }
}
