//! Building blocks shared by the encoder and the task heads.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Glorot-uniform bound for a weight mapping `fan_in` to `fan_out` features.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    if fan_in + fan_out == 0 {
        0.0
    } else {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }
}

/// A forward pass in progress: the tape being recorded and the parameter
/// values it reads.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub store: &'a ParamStore,
    untied: bool,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore) -> Self {
        Ctx {
            tape,
            store,
            untied: false,
        }
    }

    /// Every parameter use gets its own leaf, so per-use gradients can be
    /// read back from the tape.
    pub fn untied(tape: &'a mut Tape, store: &'a ParamStore) -> Self {
        Ctx {
            tape,
            store,
            untied: true,
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if self.untied {
            self.tape.param_untied(self.store, id)
        } else {
            self.tape.param(self.store, id)
        }
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.tape.input(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }
}

/// Fully connected layer with weight `[out × in]` and bias `[out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::uniform(&[fan_out, fan_in], glorot_bound(fan_in, fan_out), rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Linear { weight, bias }
    }

    pub fn in_features(&self, store: &ParamStore) -> usize {
        store.get(self.weight).shape()[1]
    }

    pub fn out_features(&self, store: &ParamStore) -> usize {
        store.get(self.weight).shape()[0]
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        ctx.tape.linear(x, w, Some(b))
    }
}
