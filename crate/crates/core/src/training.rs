//! Joint loss, Adam, and the seeded training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_indices, AeTag, Sentence};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, MetricReport, Prediction};
use crate::model::{dropout_mask, IterationOutput, Model, Network, RoundVars, SentenceInput};
use crate::nn::Ctx;
use crate::params::{ParamGrads, ParamStore};
use crate::tape::{cross_entropy, Tape, Var};
use crate::tensor::Tensor;

/// Tokens whose AS prediction is scored: gold `BA` or `IA`.
pub fn as_loss_mask(gold: &[AeTag]) -> Vec<bool> {
    gold.iter().map(|t| t.is_aspect()).collect()
}

/// Token-mean of AE cross-entropy plus masked AS cross-entropy.
pub fn sentence_loss(yae: &Tensor, yas: &Tensor, gold: &Sentence) -> Result<f64> {
    let n = gold.len();
    if yae.rows() != n || yas.rows() != n {
        return Err(Error::dim("sentence loss", yae.shape(), &[n]));
    }
    let mut total = 0.0;
    for i in 0..n {
        total += cross_entropy(yae.row(i), gold.ae_tags[i].index())?;
        if let (true, Some(p)) = (gold.ae_tags[i].is_aspect(), gold.as_tags[i]) {
            total += cross_entropy(yas.row(i), p.index())?;
        }
    }
    Ok(total / n as f64)
}

/// Mean over sentences of the final-round sentence loss.
pub fn joint_loss(outputs: &[IterationOutput], gold: &[Sentence]) -> Result<f64> {
    if outputs.len() != gold.len() || gold.is_empty() {
        return Err(Error::Contract(format!(
            "{} outputs for {} sentences",
            outputs.len(),
            gold.len()
        )));
    }
    let mut total = 0.0;
    for (o, s) in outputs.iter().zip(gold) {
        let last = o.last();
        total += sentence_loss(&last.yae, &last.yas, s)?;
    }
    Ok(total / gold.len() as f64)
}

/// Sentence loss recorded on the tape from the final round.
pub fn tape_sentence_loss(tape: &mut Tape, round: &RoundVars, gold: &Sentence) -> Result<Var> {
    let n = gold.len() as f64;
    let ae_gold: Vec<usize> = gold.ae_tags.iter().map(|t| t.index()).collect();
    let ae_w = vec![1.0 / n; gold.len()];
    let as_gold: Vec<usize> = gold.as_tags.iter().map(|p| p.map_or(0, |p| p.index())).collect();
    let as_w: Vec<f64> = gold
        .ae_tags
        .iter()
        .zip(&gold.as_tags)
        .map(|(t, p)| if t.is_aspect() && p.is_some() { 1.0 / n } else { 0.0 })
        .collect();
    let ae = tape.nll(round.yae, &ae_gold, &ae_w)?;
    let as_ = tape.nll(round.yas, &as_gold, &as_w)?;
    tape.add(ae, as_)
}

/// A sentence ready for the forward pass, with its gold tags.
#[derive(Clone, Debug)]
pub struct Example {
    pub input: SentenceInput,
    pub gold: Sentence,
}

pub fn prepare_examples(model: &Model, corpus: &[Sentence]) -> Result<Vec<Example>> {
    corpus
        .iter()
        .map(|s| {
            Ok(Example {
                input: model.prepare(s)?,
                gold: s.clone(),
            })
        })
        .collect()
}

/// Mean sentence loss of a batch without dropout.
pub fn batch_loss(network: &Network, params: &ParamStore, batch: &[Example]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::new();
            let mut ctx = Ctx::new(&mut tape, params);
            let rounds = network.forward_trace(&mut ctx, &ex.input, None)?;
            let loss = tape_sentence_loss(&mut tape, rounds.last().expect("round 0"), &ex.gold)?;
            Ok(tape.value(loss).item())
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

/// Mean batch loss and its gradient. `dropout` holds one embedding mask per
/// sentence. Per-sentence gradients are reduced in batch order.
pub fn batch_gradients(
    network: &Network,
    params: &ParamStore,
    batch: &[Example],
    dropout: Option<&[Tensor]>,
) -> Result<(f64, ParamGrads)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    if dropout.is_some_and(|d| d.len() != batch.len()) {
        return Err(Error::Contract("one dropout mask per sentence required".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<_> = batch
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut tape = Tape::new();
            let mut ctx = Ctx::new(&mut tape, params);
            let rounds = network.forward_trace(&mut ctx, &ex.input, dropout.map(|d| &d[i]))?;
            let loss = tape_sentence_loss(&mut tape, rounds.last().expect("round 0"), &ex.gold)?;
            let grads = tape.backward_seeded(loss, scale)?;
            Ok((tape.value(loss).item(), tape.param_contributions(&grads)))
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut grads = ParamGrads::zeros_like(params);
    for (loss, contributions) in parts {
        total += loss;
        for (id, c) in &contributions {
            grads.accumulate(*id, c);
        }
    }
    Ok((total * scale, grads))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// One bias-corrected Adam update of every trainable parameter. Nothing is
/// modified when any gradient is non-finite.
pub fn adam_step(store: &mut ParamStore, grads: &ParamGrads, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Contract("optimizer state does not match parameters".into()));
    }
    for id in store.ids() {
        if let Some(g) = grads.get_ref(id) {
            if g.shape() != store.get(id).shape() {
                return Err(Error::dim("adam", store.get(id).shape(), g.shape()));
            }
            if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {} at flat index {pos} is {}",
                    store.name(id),
                    g.data()[pos]
                )));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.is_frozen(id) {
            continue;
        }
        let i = id.index();
        let g = grads.get_ref(id);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = store.get_mut(id).data_mut();
        for k in 0..p.len() {
            let gk = g.map_or(0.0, |g| g.data()[k]);
            let mk = state.beta1 * m.data()[k] + (1.0 - state.beta1) * gk;
            let vk = state.beta2 * v.data()[k] + (1.0 - state.beta2) * gk * gk;
            m.data_mut()[k] = mk;
            v.data_mut()[k] = vk;
            p[k] -= lr * (mk / c1) / ((vk / c2).sqrt() + state.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub runs: usize,
    pub dev_ratio: f64,
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.0005,
            batch_size: 50,
            epochs: 100,
            seed: 1,
            runs: 5,
            dev_ratio: 0.2,
            dropout: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Contract(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Contract("batch size must be positive".into()));
        }
        if self.runs == 0 {
            return Err(Error::Contract("runs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Contract(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.dev_ratio > 0.0 && self.dev_ratio < 1.0) {
            return Err(Error::Contract(format!("dev ratio must lie in (0, 1), got {}", self.dev_ratio)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: MetricReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.map(|e| &self.epochs[e - 1])
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: TrainHistory,
}

/// Final-round arg-max predictions, in corpus order.
pub fn predict_all(model: &Model, corpus: &[Sentence]) -> Result<Vec<Prediction>> {
    corpus.par_iter().map(|s| model.predict(s)).collect()
}

pub fn evaluate_model(model: &Model, corpus: &[Sentence]) -> Result<MetricReport> {
    let pred = predict_all(model, corpus)?;
    Ok(evaluate(corpus, &pred, model.network.decode_mode()))
}

/// AE accuracy over all tokens and AS accuracy over gold aspect tokens.
pub fn token_accuracy(model: &Model, corpus: &[Sentence]) -> Result<(f64, f64)> {
    let pred = predict_all(model, corpus)?;
    let (mut ae_ok, mut ae_n, mut as_ok, mut as_n) = (0usize, 0usize, 0usize, 0usize);
    for (s, p) in corpus.iter().zip(&pred) {
        for i in 0..s.len() {
            ae_n += 1;
            ae_ok += usize::from(p.ae_tags[i] == s.ae_tags[i]);
            if let (true, Some(g)) = (s.ae_tags[i].is_aspect(), s.as_tags[i]) {
                as_n += 1;
                as_ok += usize::from(p.as_tags[i] == g);
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    Ok((ratio(ae_ok, ae_n), ratio(as_ok, as_n)))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains on `train`, scoring `dev` after every epoch and keeping the
/// parameters of the latest epoch with the highest dev F1-I.
pub fn fit(mut model: Model, train: &[Sentence], dev: &[Sentence], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Contract("training corpus is empty".into()));
    }
    let examples = prepare_examples(&model, train)?;
    // fail early on inputs the model cannot read
    for s in dev {
        model.prepare(s)?;
    }
    let mut shuffle_rng = stream_rng(cfg.seed, 1);
    let mut dropout_rng = stream_rng(cfg.seed, 2);
    let mut adam = AdamState::new(&model.params);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let width = model.network.input_dim();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let masks: Option<Vec<Tensor>> = (cfg.dropout > 0.0).then(|| {
                batch
                    .iter()
                    .map(|ex| dropout_mask(ex.input.len(), width, cfg.dropout, &mut dropout_rng))
                    .collect()
            });
            let (loss, grads) = batch_gradients(&model.network, &model.params, &batch, masks.as_deref())?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            adam_step(&mut model.params, &grads, &mut adam, cfg.lr)?;
            epoch_loss += loss * batch.len() as f64;
        }
        let report = evaluate_model(&model, dev)?;
        let score = report.f1_i;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / examples.len() as f64,
            dev: report,
        });
        if best.as_ref().is_none_or(|(b, _)| score >= *b) {
            best = Some((score, model.params.clone()));
            history.best_epoch = Some(epoch);
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(TrainOutcome { model, history })
}

/// Seeded train/dev split of `corpus` followed by [`fit`].
pub fn train(model: Model, corpus: &[Sentence], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::Contract("training corpus is empty".into()));
    }
    let split = split_indices(corpus.len(), cfg.dev_ratio, cfg.seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect::<Vec<_>>();
    fit(model, &pick(&split.train), &pick(&split.dev), cfg)
}

/// One run of a multi-run experiment.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub outcome: TrainOutcome,
    /// Scores on the test corpus when one is given, else on the dev part.
    pub report: MetricReport,
}

#[derive(Clone, Debug)]
pub struct MultiRunReport {
    pub runs: Vec<RunResult>,
    pub average: MetricReport,
}

/// `cfg.runs` independent runs with seeds `seed + r`. `build` creates the
/// initial model for a seed; `dev` replaces the random split when given.
pub fn multi_run<F>(
    corpus: &[Sentence],
    dev: Option<&[Sentence]>,
    test: Option<&[Sentence]>,
    cfg: &TrainConfig,
    build: F,
) -> Result<MultiRunReport>
where
    F: Fn(u64) -> Result<Model>,
{
    cfg.validate()?;
    let mut runs = Vec::with_capacity(cfg.runs);
    for r in 0..cfg.runs {
        let seed = cfg.seed + r as u64;
        let run_cfg = TrainConfig { seed, ..cfg.clone() };
        let model = build(seed)?;
        let outcome = match dev {
            Some(dev) => fit(model, corpus, dev, &run_cfg)?,
            None => train(model, corpus, &run_cfg)?,
        };
        let report = match test {
            Some(test) => evaluate_model(&outcome.model, test)?,
            None => match outcome.history.best() {
                Some(rec) => rec.dev.clone(),
                None => {
                    let split = split_indices(corpus.len(), cfg.dev_ratio, seed)?;
                    let dev_part: Vec<Sentence> = split.dev.iter().map(|&i| corpus[i].clone()).collect();
                    evaluate_model(&outcome.model, dev.unwrap_or(&dev_part))?
                }
            },
        };
        runs.push(RunResult { seed, outcome, report });
    }
    let reports: Vec<MetricReport> = runs.iter().map(|r| r.report.clone()).collect();
    Ok(MultiRunReport {
        average: MetricReport::average(&reports),
        runs,
    })
}
