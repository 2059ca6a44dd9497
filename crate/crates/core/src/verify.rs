//! The standard battery of gradient checks: every differentiable operation,
//! every layer type, and the whole model through its training loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_dependency_graph, AeTag, EmbeddingMatrix, Head, Polarity, RelationVocab, Sentence};
use crate::encoder::{
    cnn_encoder_forward, dregcn_layer_forward, gcn_layer_forward, CnnEncoder, DreGcnLayer, EncoderConfig, EncoderMode,
    GcnLayer, GraphOperators, RelationTable,
};
use crate::error::Result;
use crate::gradcheck::{finite_diff_gradcheck, DEFAULT_EPS, TOLERANCE};
use crate::heads::{
    ae_head_forward, as_head_forward, message_pass, MessageInputs, MessagePassingConfig, MessageVariant, TaskHeads,
};
use crate::model::{Model, ModelConfig};
use crate::nn::Ctx;
use crate::params::ParamStore;
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;
use crate::training::tape_sentence_loss;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub coordinates: usize,
    pub max_rel_error: f64,
    /// `name[index]` of parameters at or above the tolerance.
    pub offenders: Vec<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Scalar objective over a parameter store, recorded on a tape.
type Objective = Box<dyn Fn(&mut Ctx<'_>) -> Result<Var>>;

fn run_check(name: &'static str, mut store: ParamStore, fault: Option<OpKind>, f: Objective) -> Result<CheckOutcome> {
    let analytic = {
        let mut tape = Tape::new();
        if let Some(kind) = fault {
            tape.inject_fault(kind);
        }
        let mut ctx = Ctx::new(&mut tape, &store);
        let loss = f(&mut ctx)?;
        let grads = tape.backward(loss)?;
        tape.param_grads(&store, &grads)
    };
    let ids: Vec<_> = store.ids().collect();
    let report = finite_diff_gradcheck(&mut store, &ids, &analytic, DEFAULT_EPS, |s| {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, s);
        let loss = f(&mut ctx)?;
        Ok(tape.value(loss).item())
    })?;
    Ok(CheckOutcome {
        name,
        coordinates: report.params.iter().map(|p| p.coordinates).sum(),
        max_rel_error: report.max_rel_error(),
        offenders: report
            .offenders(TOLERANCE)
            .into_iter()
            .map(|p| format!("{}[{}] analytic {:e} numeric {:e}", p.name, p.worst_index, p.worst_analytic, p.worst_numeric))
            .collect(),
    })
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output coordinate matters.
fn project(ctx: &mut Ctx<'_>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = ctx.input(Tensor::uniform(ctx.value(out).shape(), 1.0, &mut rng));
    let prod = ctx.tape.mul(out, r)?;
    Ok(ctx.tape.sum(prod))
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// Four tokens: `0 ← 1 → 2`, `2 → 3`, with three relation names.
fn micro_sentence(tokens: &[&str], ae: &[AeTag], as_: &[Option<Polarity>]) -> Sentence {
    let n = tokens.len();
    let shapes: [(Head, &str); 4] = [
        (Head::Token(1), "nsubj"),
        (Head::Root, "root"),
        (Head::Token(1), "dobj"),
        (Head::Token(2), "amod"),
    ];
    Sentence::new(
        tokens.iter().map(|t| t.to_string()).collect(),
        ae.to_vec(),
        as_.to_vec(),
        shapes[..n].iter().map(|s| s.0).collect(),
        shapes[..n].iter().map(|s| s.1.to_string()).collect(),
    )
    .expect("valid micro sentence")
}

/// The three-sentence micro-batch used by the end-to-end check.
pub fn micro_batch() -> Vec<Sentence> {
    use AeTag::*;
    use Polarity::*;
    vec![
        micro_sentence(
            &["the", "pasta", "was", "great"],
            &[BA, IA, O, BP],
            &[Some(Pos), Some(Pos), None, None],
        ),
        micro_sentence(&["slow", "service", "sadly"], &[BP, BA, O], &[None, Some(Neg), None]),
        micro_sentence(&["fine", "wine", "list", "ok"], &[O, BA, IA, BP], &[None, Some(Neu), Some(Neu), None]),
    ]
}

fn micro_graph(n: usize) -> Result<GraphOperators> {
    let s = micro_batch().into_iter().find(|s| s.len() == n).expect("micro sentence of that length");
    let vocab = RelationVocab::from_corpus(std::slice::from_ref(&s), false, false);
    GraphOperators::from_graph(&build_dependency_graph(&s, &vocab)?, false)
}

/// Configuration of the end-to-end check: DreGCN+CNN, representation
/// messages, two rounds, trainable embeddings.
pub fn micro_model_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            mode: EncoderMode::DregcnPlusCnn,
            hidden: 6,
            relation_dim: 3,
            ..Default::default()
        },
        message: MessagePassingConfig {
            variant: MessageVariant::Representations,
            rounds: 2,
            opinion_passing: true,
            pass_pre_attention_as: false,
        },
        general_dim: 4,
        domain_dim: 2,
        task_hidden: Some(3),
        freeze_embeddings: false,
        ..Default::default()
    }
}

fn operation_checks(fault: Option<OpKind>) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    let mut s = ParamStore::new();
    let a = s.add("a", random(&[3, 4], &mut rng));
    let b = s.add("b", random(&[4, 2], &mut rng));
    out.push(run_check(
        "matmul",
        s,
        fault,
        Box::new(move |ctx| {
            let (a, b) = (ctx.param(a), ctx.param(b));
            let c = ctx.tape.matmul(a, b)?;
            let ct = ctx.tape.transpose(c);
            project(ctx, ct, 1)
        }),
    )?);

    let mut s = ParamStore::new();
    let a = s.add("a", random(&[3, 2], &mut rng));
    let b = s.add("b", random(&[3, 3], &mut rng));
    out.push(run_check(
        "concat",
        s,
        fault,
        Box::new(move |ctx| {
            let (a, b) = (ctx.param(a), ctx.param(b));
            let c = ctx.tape.concat(a, b)?;
            project(ctx, c, 2)
        }),
    )?);

    let mut s = ParamStore::new();
    let x = s.add("x", random(&[4, 3], &mut rng));
    let v = s.add("v", random(&[3], &mut rng));
    out.push(run_check(
        "elementwise",
        s,
        fault,
        Box::new(move |ctx| {
            let (x, v) = (ctx.param(x), ctx.param(v));
            let r = ctx.tape.relu(x);
            let sq = ctx.tape.mul(r, x)?;
            let added = ctx.tape.add_row(sq, v)?;
            let scaled = ctx.tape.mul_row(added, v)?;
            let y = ctx.tape.add(scaled, x)?;
            let y = ctx.tape.scale(y, 0.7);
            project(ctx, y, 3)
        }),
    )?);

    let mut s = ParamStore::new();
    let logits = s.add("logits", random(&[3, 5], &mut rng).map(|v| 3.0 * v));
    out.push(run_check(
        "softmax_cross_entropy",
        s,
        fault,
        Box::new(move |ctx| {
            let l = ctx.param(logits);
            let p = ctx.tape.softmax_rows(l);
            ctx.tape.nll(p, &[0, 3, 4], &[0.5, 1.0, 0.25])
        }),
    )?);

    let mut s = ParamStore::new();
    let scores = s.add("scores", random(&[4, 4], &mut rng));
    let mask: Vec<bool> = (0..16).map(|k| k / 4 != k % 4).collect();
    out.push(run_check(
        "masked_softmax",
        s,
        fault,
        Box::new(move |ctx| {
            let x = ctx.param(scores);
            let m = ctx.tape.masked_softmax_rows(x, &mask)?;
            project(ctx, m, 4)
        }),
    )?);

    let mut s = ParamStore::new();
    let x = s.add("x", random(&[4, 2], &mut rng));
    out.push(run_check(
        "unfold",
        s,
        fault,
        Box::new(move |ctx| {
            let x = ctx.param(x);
            let u = ctx.tape.unfold(x, 3)?;
            let g = ctx.tape.gather_rows(u, &[3, 0, 3])?;
            project(ctx, g, 5)
        }),
    )?);

    let mut s = ParamStore::new();
    let table = s.add("table", random(&[5, 3], &mut rng));
    out.push(run_check(
        "embedding_lookup",
        s,
        fault,
        Box::new(move |ctx| {
            let rows = ctx.tape.param_rows(ctx.store, table, &[4, 1, 4, 0])?;
            project(ctx, rows, 6)
        }),
    )?);
    Ok(out)
}

fn layer_checks(fault: Option<OpKind>) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let d = 3;

    let mut s = ParamStore::new();
    let layer = GcnLayer::new(&mut s, "gcn", d, &mut rng);
    let h = s.add("h", random(&[4, d], &mut rng));
    let adjacency = micro_graph(4)?.propagation;
    out.push(run_check(
        "gcn_layer",
        s,
        fault,
        Box::new(move |ctx| {
            let h = ctx.param(h);
            let y = gcn_layer_forward(ctx, h, &adjacency, &layer)?;
            project(ctx, y, 7)
        }),
    )?);

    let mut s = ParamStore::new();
    let ops = micro_graph(4)?;
    let types = ops.relation.shape()[1];
    let table = RelationTable::new(&mut s, types, 2, &mut rng);
    let layer = DreGcnLayer::new(&mut s, "dregcn", d, 2, &mut rng);
    let h = s.add("h", random(&[4, d], &mut rng));
    out.push(run_check(
        "dregcn_layer",
        s,
        fault,
        Box::new(move |ctx| {
            let h = ctx.param(h);
            let y = dregcn_layer_forward(ctx, h, &ops, &layer, &table)?;
            project(ctx, y, 8)
        }),
    )?);

    let mut s = ParamStore::new();
    let cnn = CnnEncoder::new(&mut s, 2, d, 2, &[3, 5], &mut rng)?;
    let x = s.add("x", random(&[4, 2], &mut rng));
    out.push(run_check(
        "cnn_encoder",
        s,
        fault,
        Box::new(move |ctx| {
            let x = ctx.param(x);
            let y = cnn_encoder_forward(ctx, x, &cnn)?;
            project(ctx, y, 9)
        }),
    )?);

    let mut s = ParamStore::new();
    let cfg = MessagePassingConfig::default();
    let heads = TaskHeads::new(&mut s, &cfg, 4, 3, 1, &mut rng);
    let hs = s.add("hs", random(&[4, 4], &mut rng));
    let ae = heads.ae.clone();
    out.push(run_check(
        "ae_head",
        s.clone(),
        fault,
        Box::new(move |ctx| {
            let hs = ctx.param(hs);
            let (hae, yae) = ae_head_forward(ctx, &ae, hs)?;
            let both = ctx.tape.concat(hae, yae)?;
            project(ctx, both, 10)
        }),
    )?);

    let h2 = heads.clone();
    out.push(run_check(
        "as_head",
        s.clone(),
        fault,
        Box::new(move |ctx| {
            let hs = ctx.param(hs);
            let (_, yae) = ae_head_forward(ctx, &h2.ae, hs)?;
            let a = as_head_forward(ctx, &h2.as_head, hs, yae, None)?;
            let both = ctx.tape.concat(a.has_final, a.yas)?;
            project(ctx, both, 11)
        }),
    )?);

    for (name, variant) in [
        ("message_pass_predictions", MessageVariant::Predictions),
        ("message_pass_representations", MessageVariant::Representations),
    ] {
        let mut s = ParamStore::new();
        let cfg = MessagePassingConfig {
            variant,
            ..Default::default()
        };
        let heads = TaskHeads::new(&mut s, &cfg, 4, 3, 1, &mut rng);
        let hs = s.add("hs", random(&[4, 4], &mut rng));
        out.push(run_check(
            name,
            s,
            fault,
            Box::new(move |ctx| {
                let hs = ctx.param(hs);
                let (hae, yae) = ae_head_forward(ctx, &heads.ae, hs)?;
                let a = as_head_forward(ctx, &heads.as_head, hs, yae, None)?;
                let prev = MessageInputs {
                    hs,
                    hae,
                    yae,
                    has: a.has,
                    has_final: a.has_final,
                    yas: a.yas,
                };
                let next = message_pass(ctx, &heads.config, &prev, heads.re_encoder.as_ref().expect("re-encoder"))?;
                project(ctx, next, 12)
            }),
        )?);
    }
    Ok(out)
}

/// Model built from the micro-batch with random embeddings.
pub fn micro_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    let batch = micro_batch();
    let words = crate::corpus::corpus_words([batch.as_slice()]);
    Model::new(
        config,
        RelationVocab::from_corpus(&batch, false, true),
        EmbeddingMatrix::random(words.iter().cloned(), config.general_dim, seed + 1),
        EmbeddingMatrix::random(words.iter().cloned(), config.domain_dim, seed + 2),
        seed,
    )
}

/// Moves a freshly initialised model to a point where the loss is smooth and
/// its derivatives are well above finite-difference rounding: unit-scale
/// embeddings, and biases drawn from `[-0.1, 0.1]` so that no ReLU input sits
/// exactly on the kink at zero.
pub fn differentiable_point(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name = model.params.name(id).to_string();
        let shape = model.params.get(id).shape().to_vec();
        if name.starts_with("emb.") {
            *model.params.get_mut(id) = Tensor::uniform(&shape, 1.0, &mut rng);
        } else if name.ends_with(".bias") {
            *model.params.get_mut(id) = Tensor::uniform(&shape, 0.1, &mut rng);
        }
    }
}

fn model_check(fault: Option<OpKind>) -> Result<CheckOutcome> {
    model_check_seeded(fault, 303)
}

#[doc(hidden)]
pub fn model_check_seeded(fault: Option<OpKind>, seed: u64) -> Result<CheckOutcome> {
    let mut model = micro_model(&micro_model_config(), seed)?;
    differentiable_point(&mut model, seed);
    let batch = micro_batch();
    let inputs = batch.iter().map(|s| model.prepare(s)).collect::<Result<Vec<_>>>()?;
    let network = model.network.clone();
    run_check(
        "full_model",
        model.params,
        fault,
        Box::new(move |ctx| {
            let mut total: Option<Var> = None;
            for (input, gold) in inputs.iter().zip(&batch) {
                let rounds = network.forward_trace(ctx, input, None)?;
                let loss = tape_sentence_loss(ctx.tape, rounds.last().expect("round 0"), gold)?;
                total = Some(match total {
                    Some(t) => ctx.tape.add(t, loss)?,
                    None => loss,
                });
            }
            let total = total.expect("non-empty batch");
            Ok(ctx.tape.scale(total, 1.0 / batch.len() as f64))
        }),
    )
}

/// Runs every check. `fault` corrupts one backward rule on the analytic pass.
pub fn standard_checks(fault: Option<OpKind>) -> Result<Vec<CheckOutcome>> {
    let mut out = operation_checks(fault)?;
    out.extend(layer_checks(fault)?);
    out.push(model_check(fault)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_cross_entropy_is_very_accurate() {
        let checks = operation_checks(None).unwrap();
        let ce = checks.iter().find(|c| c.name == "softmax_cross_entropy").unwrap();
        assert!(ce.max_rel_error < 1e-6, "{}", ce.max_rel_error);
    }

    #[test]
    fn broken_rule_is_caught() {
        let checks = operation_checks(Some(OpKind::MatMul)).unwrap();
        let mm = checks.iter().find(|c| c.name == "matmul").unwrap();
        assert!(!mm.passed());
        assert!(!mm.offenders.is_empty());
    }
}
