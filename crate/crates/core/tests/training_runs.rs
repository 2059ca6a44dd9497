use std::collections::BTreeSet;

use dregcn_core::checkpoint::save_checkpoint;
use dregcn_core::corpus::{EmbeddingMatrix, RelationVocab, Sentence};
use dregcn_core::model::{Model, ModelConfig};
use dregcn_core::synthetic::overfit_corpus;
use dregcn_core::training::{batch_gradients, batch_loss, multi_run, prepare_examples, train, TrainConfig};

fn config() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.encoder.hidden = 8;
    c.encoder.relation_dim = 4;
    c.encoder.cnn_layers = 1;
    c.general_dim = 4;
    c.domain_dim = 2;
    c
}

fn model(corpus: &[Sentence], seed: u64) -> Model {
    model_with(&config(), corpus, seed)
}

fn model_with(cfg: &ModelConfig, corpus: &[Sentence], seed: u64) -> Model {
    let words: BTreeSet<String> = corpus.iter().flat_map(|s| s.tokens.iter().cloned()).collect();
    Model::new(
        cfg,
        RelationVocab::from_corpus(corpus, false, true),
        EmbeddingMatrix::random(words.iter().cloned(), cfg.general_dim, seed),
        EmbeddingMatrix::random(words.iter().cloned(), cfg.domain_dim, seed + 1),
        seed,
    )
    .unwrap()
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        lr: 0.01,
        batch_size: 4,
        epochs: 4,
        seed: 3,
        runs: 2,
        dev_ratio: 0.25,
        dropout: 0.5,
    }
}

#[test]
fn training_is_deterministic() {
    let corpus = overfit_corpus(12, 1);
    let a = train(model(&corpus, 3), &corpus, &train_cfg()).unwrap();
    let b = train(model(&corpus, 3), &corpus, &train_cfg()).unwrap();
    assert_eq!(save_checkpoint(&a.model), save_checkpoint(&b.model));
    assert_eq!(a.history.epochs.len(), 4);
    let best = a.history.best().unwrap();
    assert!(a.history.epochs.iter().all(|e| e.dev.f1_i <= best.dev.f1_i));
    // ties go to the later epoch
    let last_best = a.history.epochs.iter().rposition(|e| e.dev.f1_i == best.dev.f1_i).unwrap();
    assert_eq!(a.history.best_epoch, Some(last_best + 1));
}

#[test]
fn gradient_reduction_does_not_depend_on_thread_scheduling() {
    let corpus = overfit_corpus(16, 2);
    let m = model(&corpus, 5);
    let batch = prepare_examples(&m, &corpus).unwrap();
    let (l1, g1) = batch_gradients(&m.network, &m.params, &batch, None).unwrap();
    let (l2, g2) = batch_gradients(&m.network, &m.params, &batch, None).unwrap();
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert!((l1 - batch_loss(&m.network, &m.params, &batch).unwrap()).abs() < 1e-12);
    for id in m.params.ids() {
        let bits = |g: &dregcn_core::ParamGrads| g.get(id).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&g1), bits(&g2), "{}", m.params.name(id));
    }
}

#[test]
fn runs_use_consecutive_seeds_and_average_scores() {
    let corpus = overfit_corpus(10, 4);
    let report = multi_run(&corpus, None, Some(&corpus), &train_cfg(), |seed| Ok(model(&corpus, seed))).unwrap();
    let seeds: Vec<u64> = report.runs.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, [3, 4]);
    let mean = (report.runs[0].report.f1_a + report.runs[1].report.f1_a) / 2.0;
    assert!((report.average.f1_a - mean).abs() < 1e-15);
}

#[test]
fn embeddings_train_unless_frozen() {
    let corpus = overfit_corpus(8, 6);
    for freeze in [false, true] {
        let cfg = ModelConfig {
            freeze_embeddings: freeze,
            ..config()
        };
        let start = model_with(&cfg, &corpus, 7);
        let general = start.params.find("emb.general").unwrap();
        let before = start.params.get(general).clone();
        let out = train(start, &corpus, &train_cfg()).unwrap();
        assert_eq!(out.model.params.get(general) == &before, freeze);
    }
}
