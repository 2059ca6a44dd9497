//! Task components: aspect/opinion tagging (AE), aspect sentiment (AS) with
//! opinion-aware attention, and the re-encoder that feeds task outputs back
//! into the shared sequence between rounds.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::AeTag;
use crate::error::{Error, Result};
use crate::nn::{glorot_bound, Ctx, Linear};
use crate::params::{ParamId, ParamStore};
use crate::tape::Var;
use crate::tensor::Tensor;

pub const AE_CLASSES: usize = 5;
pub const AS_CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageVariant {
    None,
    /// Re-encode from the shared vector and both tasks' probabilities.
    Predictions,
    /// Re-encode from the shared vector and both tasks' hidden representations.
    Representations,
}

impl MessageVariant {
    pub fn name(self) -> &'static str {
        match self {
            MessageVariant::None => "none",
            MessageVariant::Predictions => "predictions",
            MessageVariant::Representations => "representations",
        }
    }
}

impl FromStr for MessageVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(MessageVariant::None),
            "predictions" => Ok(MessageVariant::Predictions),
            "representations" => Ok(MessageVariant::Representations),
            _ => Err(format!(
                "unknown message-passing variant `{s}` (expected none, predictions or representations)"
            )),
        }
    }
}

impl fmt::Display for MessageVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessagePassingConfig {
    pub variant: MessageVariant,
    pub rounds: usize,
    pub opinion_passing: bool,
    /// Feed the AS representation from before opinion attention into the
    /// re-encoder instead of the concatenated one.
    pub pass_pre_attention_as: bool,
}

impl Default for MessagePassingConfig {
    fn default() -> Self {
        MessagePassingConfig {
            variant: MessageVariant::Representations,
            rounds: 2,
            opinion_passing: true,
            pass_pre_attention_as: false,
        }
    }
}

impl MessagePassingConfig {
    /// Rounds actually run; no variant means no rounds.
    pub fn effective_rounds(&self) -> usize {
        if self.variant == MessageVariant::None {
            0
        } else {
            self.rounds
        }
    }
}

/// Stack of ReLU layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenStack {
    pub layers: Vec<Linear>,
}

impl HiddenStack {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, width: usize, depth: usize, rng: &mut R) -> Self {
        let layers = (0..depth.max(1))
            .map(|l| {
                let fan_in = if l == 0 { input } else { width };
                Linear::new(store, &format!("{name}.{l}"), fan_in, width, rng)
            })
            .collect();
        HiddenStack { layers }
    }

    fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            let pre = layer.forward(ctx, h)?;
            h = ctx.tape.relu(pre);
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeHead {
    pub hidden: HiddenStack,
    pub output: Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsHead {
    pub hidden: HiddenStack,
    /// Bilinear relevance matrix `[d_t × d_t]`; absent when opinion passing is off.
    pub bilinear: Option<ParamId>,
    pub output: Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReEncoder {
    pub fc: Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskHeads {
    pub ae: AeHead,
    pub as_head: AsHead,
    pub re_encoder: Option<ReEncoder>,
    pub config: MessagePassingConfig,
    pub task_dim: usize,
}

/// Width of the re-encoder input for a variant.
pub fn message_input_dim(config: &MessagePassingConfig, shared_dim: usize, task_dim: usize) -> usize {
    match config.variant {
        MessageVariant::None => shared_dim,
        MessageVariant::Predictions => shared_dim + AE_CLASSES + AS_CLASSES,
        MessageVariant::Representations if config.pass_pre_attention_as => shared_dim + 2 * task_dim,
        MessageVariant::Representations => shared_dim + 3 * task_dim,
    }
}

impl TaskHeads {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: &MessagePassingConfig,
        shared_dim: usize,
        task_dim: usize,
        depth: usize,
        rng: &mut R,
    ) -> Self {
        let ae = AeHead {
            hidden: HiddenStack::new(store, "ae.hidden", shared_dim, task_dim, depth, rng),
            output: Linear::new(store, "ae.out", task_dim, AE_CLASSES, rng),
        };
        let bilinear = config.opinion_passing.then(|| {
            store.add(
                "as.bilinear",
                Tensor::uniform(&[task_dim, task_dim], glorot_bound(task_dim, task_dim), rng),
            )
        });
        let as_head = AsHead {
            hidden: HiddenStack::new(store, "as.hidden", shared_dim, task_dim, depth, rng),
            bilinear,
            output: Linear::new(store, "as.out", 2 * task_dim, AS_CLASSES, rng),
        };
        let re_encoder = (config.variant != MessageVariant::None).then(|| ReEncoder {
            fc: Linear::new(
                store,
                "re_encoder",
                message_input_dim(config, shared_dim, task_dim),
                shared_dim,
                rng,
            ),
        });
        TaskHeads {
            ae,
            as_head,
            re_encoder,
            config: config.clone(),
            task_dim,
        }
    }
}

/// `(H_ae, Ŷ_ae)`: ReLU hidden representation and row-wise class
/// probabilities over `BA IA BP IP O`.
pub fn ae_head_forward(ctx: &mut Ctx<'_>, head: &AeHead, hs: Var) -> Result<(Var, Var)> {
    let hae = head.hidden.forward(ctx, hs)?;
    let logits = head.output.forward(ctx, hae)?;
    Ok((hae, ctx.tape.softmax_rows(logits)))
}

/// Probability mass on the opinion labels `BP` and `IP`.
pub fn opinion_prob(yae_row: &[f64]) -> f64 {
    yae_row[AeTag::BP.index()] + yae_row[AeTag::IP.index()]
}

/// `1/|i − j|` off the diagonal, 0 on it.
pub fn distance_factor(n: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                t.set(i, j, 1.0 / (i as f64 - j as f64).abs());
            }
        }
    }
    t
}

/// Positions each row may attend to: every other valid token.
fn attention_mask(n: usize, valid: Option<&[bool]>) -> Vec<bool> {
    let ok = |i: usize| valid.is_none_or(|v| v[i]);
    let mut mask = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            mask[i * n + j] = i != j && ok(i) && ok(j);
        }
    }
    mask
}

/// Attention over context tokens: `S_ij = (h_i W h_jᵀ) · 1/|i−j| · P_op[j]`,
/// normalised per row over `j ≠ i`. `pop` is an `[n × 1]` column. A row with
/// no admissible context (a single-token sentence, or a padded row) is zero.
pub fn opinion_attention(
    ctx: &mut Ctx<'_>,
    has: Var,
    bilinear: ParamId,
    pop: Var,
    valid: Option<&[bool]>,
) -> Result<Var> {
    let n = ctx.value(has).rows();
    if ctx.value(pop).len() != n {
        return Err(Error::dim("opinion attention", ctx.value(has).shape(), ctx.value(pop).shape()));
    }
    if valid.is_some_and(|v| v.len() != n) {
        return Err(Error::Contract("pad mask length differs from sentence length".into()));
    }
    let w = ctx.param(bilinear);
    let hw = ctx.tape.matmul(has, w)?;
    let ht = ctx.tape.transpose(has);
    let relevance = ctx.tape.matmul(hw, ht)?;
    let dist = ctx.input(distance_factor(n));
    let scaled = ctx.tape.mul(relevance, dist)?;
    let pop_row = ctx.tape.transpose(pop);
    let scores = ctx.tape.mul_row(scaled, pop_row)?;
    ctx.tape.masked_softmax_rows(scores, &attention_mask(n, valid))
}

/// `[h_i ; Σ_j M_ij h_j]` for every token.
pub fn opinion_passing_apply(ctx: &mut Ctx<'_>, has: Var, attention: Var) -> Result<Var> {
    let context = ctx.tape.matmul(attention, has)?;
    ctx.tape.concat(has, context)
}

/// AS component outputs for one round.
#[derive(Clone, Copy, Debug)]
pub struct AsOutputs {
    pub has: Var,
    pub has_final: Var,
    pub yas: Var,
    pub attention: Option<Var>,
}

pub fn as_head_forward(
    ctx: &mut Ctx<'_>,
    head: &AsHead,
    hs: Var,
    yae: Var,
    valid: Option<&[bool]>,
) -> Result<AsOutputs> {
    let has = head.hidden.forward(ctx, hs)?;
    let (has_final, attention) = match head.bilinear {
        Some(w) => {
            let selector = ctx.input(opinion_selector());
            let pop = ctx.tape.matmul(yae, selector)?;
            let m = opinion_attention(ctx, has, w, pop, valid)?;
            (opinion_passing_apply(ctx, has, m)?, Some(m))
        }
        None => {
            let zeros = ctx.input(Tensor::zeros(ctx.value(has).shape()));
            (ctx.tape.concat(has, zeros)?, None)
        }
    };
    let logits = head.output.forward(ctx, has_final)?;
    let yas = ctx.tape.softmax_rows(logits);
    Ok(AsOutputs {
        has,
        has_final,
        yas,
        attention,
    })
}

/// `[5 × 1]` column picking `BP + IP` out of an AE distribution.
fn opinion_selector() -> Tensor {
    let mut t = Tensor::zeros(&[AE_CLASSES, 1]);
    t.set(AeTag::BP.index(), 0, 1.0);
    t.set(AeTag::IP.index(), 0, 1.0);
    t
}

/// Previous-round quantities a message is built from.
#[derive(Clone, Copy, Debug)]
pub struct MessageInputs {
    pub hs: Var,
    pub hae: Var,
    pub yae: Var,
    pub has: Var,
    pub has_final: Var,
    pub yas: Var,
}

/// Next shared sequence from the previous round.
pub fn message_pass(
    ctx: &mut Ctx<'_>,
    config: &MessagePassingConfig,
    prev: &MessageInputs,
    re: &ReEncoder,
) -> Result<Var> {
    let message = match config.variant {
        MessageVariant::None => {
            return Err(Error::Contract("message passing requested with variant none".into()));
        }
        MessageVariant::Predictions => ctx.tape.concat_all(&[prev.hs, prev.yae, prev.yas])?,
        MessageVariant::Representations => {
            let as_repr = if config.pass_pre_attention_as {
                prev.has
            } else {
                prev.has_final
            };
            ctx.tape.concat_all(&[prev.hs, prev.hae, as_repr])?
        }
    };
    let expected = re.fc.in_features(ctx.store);
    if ctx.value(message).cols() != expected {
        return Err(Error::dim("re-encoder", ctx.value(message).shape(), &[expected]));
    }
    re.fc.forward(ctx, message)
}
