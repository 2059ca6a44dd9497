//! The full network: embeddings, shared encoder, task heads and the
//! message-passing loop.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_dependency_graph, AeTag, EmbeddingMatrix, Polarity, RelationVocab, Sentence};
use crate::encoder::{Encoder, EncoderConfig, GraphOperators};
use crate::error::{Error, Result};
use crate::evaluation::{DecodeMode, Prediction};
use crate::heads::{ae_head_forward, as_head_forward, message_pass, MessageInputs, MessagePassingConfig, TaskHeads};
use crate::nn::Ctx;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub message: MessagePassingConfig,
    pub general_dim: usize,
    pub domain_dim: usize,
    /// Task hidden width `d_t`; half the shared width when absent.
    pub task_hidden: Option<usize>,
    pub head_depth: usize,
    pub freeze_embeddings: bool,
    pub distinct_reverse_types: bool,
    pub unknown_relations: bool,
    pub decode_mode: DecodeMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            message: MessagePassingConfig::default(),
            general_dim: 300,
            domain_dim: 100,
            task_hidden: None,
            head_depth: 1,
            freeze_embeddings: false,
            distinct_reverse_types: false,
            unknown_relations: true,
            decode_mode: DecodeMode::Lenient,
        }
    }
}

impl ModelConfig {
    pub fn task_dim(&self) -> usize {
        self.task_hidden.unwrap_or((self.encoder.hidden / 2).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.encoder.hidden),
            ("general_dim", self.general_dim),
            ("head_depth", self.head_depth),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Contract(format!("{name} must be positive")));
            }
        }
        if self.task_hidden == Some(0) {
            return Err(Error::Contract("task_hidden must be positive".into()));
        }
        if self.encoder.mode.uses_cnn() && self.encoder.cnn_layers == 0 {
            return Err(Error::Contract("cnn modes need at least one cnn layer".into()));
        }
        Ok(())
    }
}

/// Word-to-row index of an embedding table; the last row is the OOV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordIndex {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl WordIndex {
    pub fn new(words: Vec<String>) -> Self {
        let mut w = WordIndex {
            words,
            index: HashMap::new(),
        };
        w.reindex();
        w
    }

    pub fn reindex(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn oov_index(&self) -> usize {
        self.words.len()
    }

    /// Exact match, then lowercase, then the OOV row.
    pub fn lookup(&self, word: &str) -> usize {
        if let Some(&i) = self.index.get(word) {
            return i;
        }
        self.index
            .get(&word.to_lowercase())
            .copied()
            .unwrap_or(self.oov_index())
    }
}

/// Architecture, vocabularies and parameter handles. Values live in a
/// separate [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: ModelConfig,
    pub relations: RelationVocab,
    pub general_words: WordIndex,
    pub domain_words: WordIndex,
    pub general: ParamId,
    pub domain: ParamId,
    pub encoder: Encoder,
    pub heads: TaskHeads,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub network: Network,
    pub params: ParamStore,
}

/// Everything the forward pass needs from one sentence.
#[derive(Clone, Debug)]
pub struct SentenceInput {
    pub general_rows: Vec<usize>,
    pub domain_rows: Vec<usize>,
    pub graph: Option<GraphOperators>,
}

impl SentenceInput {
    pub fn len(&self) -> usize {
        self.general_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.general_rows.is_empty()
    }
}

/// Tape handles of one round.
#[derive(Clone, Copy, Debug)]
pub struct RoundVars {
    pub hs: Var,
    pub hae: Var,
    pub yae: Var,
    pub has: Var,
    pub has_final: Var,
    pub yas: Var,
    pub attention: Option<Var>,
}

/// Values of one round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutput {
    pub hs: Tensor,
    pub hae: Tensor,
    pub yae: Tensor,
    pub has_final: Tensor,
    pub yas: Tensor,
    pub attention: Option<Tensor>,
}

/// Round 0 followed by one entry per message-passing round.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationOutput {
    pub rounds: Vec<RoundOutput>,
}

impl IterationOutput {
    pub fn last(&self) -> &RoundOutput {
        self.rounds.last().expect("round 0 is always present")
    }
}

/// Inverted dropout mask `[n × width]` with entries 0 or `1/(1−rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, width: usize, rate: f64, rng: &mut R) -> Tensor {
    let keep = 1.0 - rate;
    let data = (0..n * width)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Tensor::matrix(n, width, data).expect("mask shape")
}

impl Model {
    /// Fresh parameters; the embedding tables are copied in as parameters.
    pub fn new(
        config: &ModelConfig,
        relations: RelationVocab,
        general: EmbeddingMatrix,
        domain: EmbeddingMatrix,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if general.dim() != config.general_dim || domain.dim() != config.domain_dim {
            return Err(Error::Incompatible(format!(
                "embedding widths {}+{} differ from configured {}+{}",
                general.dim(),
                domain.dim(),
                config.general_dim,
                config.domain_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let general_words = WordIndex::new(general.words().to_vec());
        let domain_words = WordIndex::new(domain.words().to_vec());
        let general = params.add("emb.general", general.into_matrix());
        let domain = params.add("emb.domain", domain.into_matrix());
        params.freeze(general, config.freeze_embeddings);
        params.freeze(domain, config.freeze_embeddings);
        let input_dim = config.general_dim + config.domain_dim;
        let encoder = Encoder::new(&mut params, &config.encoder, input_dim, relations.len(), &mut rng)?;
        let heads = TaskHeads::new(
            &mut params,
            &config.message,
            encoder.output_dim(),
            config.task_dim(),
            config.head_depth,
            &mut rng,
        );
        Ok(Model {
            network: Network {
                config: config.clone(),
                relations,
                general_words,
                domain_words,
                general,
                domain,
                encoder,
                heads,
            },
            params,
        })
    }

    pub fn prepare(&self, s: &Sentence) -> Result<SentenceInput> {
        self.network.prepare(s)
    }

    pub fn forward_full(&self, input: &SentenceInput) -> Result<IterationOutput> {
        self.network.forward_full(&self.params, input)
    }

    pub fn predict(&self, s: &Sentence) -> Result<Prediction> {
        let input = self.prepare(s)?;
        Ok(prediction_from(self.forward_full(&input)?.last()))
    }
}

/// Arg-max tags of a round.
pub fn prediction_from(round: &RoundOutput) -> Prediction {
    Prediction {
        ae_tags: round.yae.argmax_rows().into_iter().map(AeTag::from_index).collect(),
        as_tags: round.yas.argmax_rows().into_iter().map(Polarity::from_index).collect(),
    }
}

impl Network {
    /// Rebuilds lookup indices after deserialisation.
    pub fn reindex(&mut self) {
        self.relations.reindex();
        self.general_words.reindex();
        self.domain_words.reindex();
    }

    pub fn decode_mode(&self) -> DecodeMode {
        self.config.decode_mode
    }

    pub fn input_dim(&self) -> usize {
        self.config.general_dim + self.config.domain_dim
    }

    /// Word rows and, for graph modes, the dependency operators.
    pub fn prepare(&self, s: &Sentence) -> Result<SentenceInput> {
        let graph = if self.config.encoder.mode.uses_graph() {
            let g = build_dependency_graph(s, &self.relations).map_err(|e| match e {
                Error::Vocabulary(msg) => Error::Incompatible(format!("{msg} (not in the model's relation vocabulary)")),
                other => other,
            })?;
            Some(GraphOperators::from_graph(&g, self.config.encoder.normalize_adjacency)?)
        } else {
            None
        };
        Ok(SentenceInput {
            general_rows: s.tokens.iter().map(|w| self.general_words.lookup(w)).collect(),
            domain_rows: s.tokens.iter().map(|w| self.domain_words.lookup(w)).collect(),
            graph,
        })
    }

    fn embed(&self, ctx: &mut Ctx<'_>, input: &SentenceInput) -> Result<Var> {
        let lookup = |ctx: &mut Ctx<'_>, id: ParamId, rows: &[usize]| -> Result<Var> {
            if ctx.store.is_frozen(id) {
                let table = ctx.store.get(id);
                let mut data = Vec::with_capacity(rows.len() * table.cols());
                for &r in rows {
                    data.extend_from_slice(table.row(r));
                }
                let t = Tensor::matrix(rows.len(), table.cols(), data)?;
                Ok(ctx.input(t))
            } else {
                ctx.tape.param_rows(ctx.store, id, rows)
            }
        };
        let g = lookup(ctx, self.general, &input.general_rows)?;
        let d = lookup(ctx, self.domain, &input.domain_rows)?;
        ctx.tape.concat(g, d)
    }

    /// Records the whole forward pass. `dropout` multiplies the embeddings.
    pub fn forward_trace(&self, ctx: &mut Ctx<'_>, input: &SentenceInput, dropout: Option<&Tensor>) -> Result<Vec<RoundVars>> {
        if input.is_empty() {
            return Err(Error::Contract("empty sentence".into()));
        }
        let mut emb = self.embed(ctx, input)?;
        if let Some(mask) = dropout {
            let m = ctx.input(mask.clone());
            emb = ctx.tape.mul(emb, m)?;
        }
        let mut hs = self.network_encode(ctx, emb, input)?;
        let cfg = &self.heads.config;
        let mut rounds = Vec::with_capacity(cfg.effective_rounds() + 1);
        for t in 0..=cfg.effective_rounds() {
            if t > 0 {
                let prev: &RoundVars = rounds.last().expect("previous round");
                let inputs = MessageInputs {
                    hs: prev.hs,
                    hae: prev.hae,
                    yae: prev.yae,
                    has: prev.has,
                    has_final: prev.has_final,
                    yas: prev.yas,
                };
                let re = self.heads.re_encoder.as_ref().expect("re-encoder exists when rounds > 0");
                hs = message_pass(ctx, cfg, &inputs, re)?;
            }
            let (hae, yae) = ae_head_forward(ctx, &self.heads.ae, hs)?;
            let a = as_head_forward(ctx, &self.heads.as_head, hs, yae, None)?;
            rounds.push(RoundVars {
                hs,
                hae,
                yae,
                has: a.has,
                has_final: a.has_final,
                yas: a.yas,
                attention: a.attention,
            });
        }
        Ok(rounds)
    }

    fn network_encode(&self, ctx: &mut Ctx<'_>, emb: Var, input: &SentenceInput) -> Result<Var> {
        self.encoder.encode_shared(ctx, emb, input.graph.as_ref())
    }

    pub fn forward_full(&self, params: &ParamStore, input: &SentenceInput) -> Result<IterationOutput> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, params);
        let vars = self.forward_trace(&mut ctx, input, None)?;
        let rounds = vars
            .iter()
            .map(|r| RoundOutput {
                hs: tape.value(r.hs).clone(),
                hae: tape.value(r.hae).clone(),
                yae: tape.value(r.yae).clone(),
                has_final: tape.value(r.has_final).clone(),
                yas: tape.value(r.yas).clone(),
                attention: r.attention.map(|a| tape.value(a).clone()),
            })
            .collect();
        Ok(IterationOutput { rounds })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corpus_words, parse_corpus_file};
    use crate::encoder::EncoderMode;
    use crate::heads::MessageVariant;

    const TEXT: &str = "\
great\tBP\tnone\t1\tamod
pizza\tBA\tpos\tROOT\troot

x\tO\tnone\tROOT\troot
";

    fn model(mode: EncoderMode, variant: MessageVariant, rounds: usize) -> (Model, Vec<Sentence>) {
        let corpus = parse_corpus_file(TEXT).unwrap();
        let words = corpus_words([corpus.as_slice()]);
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                mode,
                hidden: 6,
                relation_dim: 3,
                ..Default::default()
            },
            message: MessagePassingConfig {
                variant,
                rounds,
                ..Default::default()
            },
            general_dim: 4,
            domain_dim: 2,
            ..Default::default()
        };
        let vocab = RelationVocab::from_corpus(&corpus, false, true);
        let g = EmbeddingMatrix::random(words.iter().cloned(), 4, 1);
        let d = EmbeddingMatrix::random(words.iter().cloned(), 2, 2);
        (Model::new(&cfg, vocab, g, d, 3).unwrap(), corpus)
    }

    #[test]
    fn rounds_are_stored_and_normalised() {
        let (m, corpus) = model(EncoderMode::DregcnPlusCnn, MessageVariant::Representations, 2);
        for s in &corpus {
            let out = m.forward_full(&m.prepare(s).unwrap()).unwrap();
            assert_eq!(out.rounds.len(), 3);
            for r in &out.rounds {
                for i in 0..s.len() {
                    assert!((r.yae.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    assert!((r.yas.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn no_variant_equals_zero_rounds() {
        let (a, corpus) = model(EncoderMode::Dregcn, MessageVariant::None, 3);
        let (mut b, _) = model(EncoderMode::Dregcn, MessageVariant::None, 0);
        b.params = a.params.clone();
        let s = &corpus[0];
        let oa = a.forward_full(&a.prepare(s).unwrap()).unwrap();
        let ob = b.forward_full(&b.prepare(s).unwrap()).unwrap();
        assert_eq!(oa.rounds.len(), 1);
        assert_eq!(oa, ob);
    }

    #[test]
    fn cnn_only_needs_no_graph() {
        let (m, corpus) = model(EncoderMode::CnnOnly, MessageVariant::Predictions, 1);
        let input = m.prepare(&corpus[0]).unwrap();
        assert!(input.graph.is_none());
        let p = m.predict(&corpus[1]).unwrap();
        assert_eq!(p.ae_tags.len(), 1);
    }

    #[test]
    fn unknown_words_use_the_oov_row() {
        let (m, _) = model(EncoderMode::CnnOnly, MessageVariant::None, 0);
        let w = &m.network.general_words;
        assert_eq!(w.lookup("never-seen"), w.oov_index());
        assert_eq!(w.lookup("PIZZA"), w.lookup("pizza"));
    }

    #[test]
    fn dropout_mask_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = dropout_mask(10, 10, 0.5, &mut rng);
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(m.data().contains(&0.0));
        assert!(dropout_mask(3, 3, 0.0, &mut rng).data().iter().all(|&v| v == 1.0));
    }
}
