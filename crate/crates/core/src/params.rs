//! Named parameter storage and gradient accumulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    frozen: Vec<bool>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        self.frozen.push(false);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.tensors[id.0].shape() {
            return Err(Error::dim("set parameter", self.tensors[id.0].shape(), value.shape()));
        }
        self.tensors[id.0] = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn freeze(&mut self, id: ParamId, frozen: bool) {
        self.frozen[id.0] = frozen;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    /// Total number of scalar coordinates.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// A gradient contribution for one parameter, either dense or restricted to a
/// set of rows (embedding look-ups).
#[derive(Clone, Debug)]
pub enum Contribution {
    Dense(Tensor),
    Rows { indices: Vec<usize>, values: Tensor },
}

/// Dense gradient buffers aligned with a [`ParamStore`]. Buffers are created
/// lazily; a parameter that never received a contribution has zero gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        ParamGrads {
            shapes: store.tensors.iter().map(|t| t.shape().to_vec()).collect(),
            grads: vec![None; store.len()],
        }
    }

    pub fn accumulate(&mut self, id: ParamId, contribution: &Contribution) {
        let shape = &self.shapes[id.0];
        let slot = self.grads[id.0].get_or_insert_with(|| Tensor::zeros(shape));
        match contribution {
            Contribution::Dense(t) => slot.add_assign(t),
            Contribution::Rows { indices, values } => {
                let cols = slot.cols();
                let data = slot.data_mut();
                for (r, &idx) in indices.iter().enumerate() {
                    let src = values.row(r);
                    for (d, s) in data[idx * cols..(idx + 1) * cols].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }

    pub fn add(&mut self, other: &ParamGrads) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), &Contribution::Dense(g.clone()));
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(factor);
        }
    }

    /// Gradient for `id`, materialising zeros when nothing was accumulated.
    pub fn get(&self, id: ParamId) -> Tensor {
        self.grads[id.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }

    pub fn get_ref(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn max_abs(&self, id: ParamId) -> f64 {
        self.grads[id.0].as_ref().map_or(0.0, Tensor::max_abs)
    }
}
