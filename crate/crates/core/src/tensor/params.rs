use std::ops::Index;

use sha2::{Digest, Sha256};

use super::{Gradients, Graph, Real, Tensor, Var};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors of one model. A frozen store binds its tensors as
/// constants, so nothing upstream of it ever receives a gradient.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    trainable: bool,
}

impl<T: Real> ParamStore<T> {
    pub fn new(trainable: bool) -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            trainable,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let tensor = if self.trainable {
            tensor.detached().with_grad()
        } else {
            tensor.detached()
        };
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces a parameter's values, keeping its shape.
    pub fn set(&mut self, id: ParamId, data: &[T]) -> Result<()> {
        let t = &mut self.tensors[id.0];
        if t.len() != data.len() {
            return Err(shape_err(format!(
                "parameter {} expects {} values, got {}",
                self.names[id.0],
                t.len(),
                data.len()
            )));
        }
        t.data_mut().copy_from_slice(data);
        Ok(())
    }

    /// Records every parameter on the tape.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundParams {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|t| g.leaf(t.detached(), self.trainable))
                .collect(),
        }
    }

    /// Adds the sweep's gradients into each parameter's accumulator.
    pub fn accumulate(&mut self, bound: &BoundParams, grads: &Gradients<T>) {
        for (t, &v) in self.tensors.iter_mut().zip(&bound.vars) {
            if let (Some(acc), Some(g)) = (t.grad_mut(), grads.wrt(v)) {
                for (a, &x) in acc.iter_mut().zip(g) {
                    *a += x;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &x in t.data() {
                h.update(x.as_f64().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Copies values from another store with identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.names != other.names {
            return Err(shape_err("parameter layouts differ"));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(shape_err("parameter shapes differ"));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

/// Tape handles of a bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl Index<ParamId> for BoundParams {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}
