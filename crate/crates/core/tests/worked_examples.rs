use dregcn_core::corpus::{corpus_stats, parse_corpus_file, AeTag, Head, Polarity, RelationVocab};
use dregcn_core::evaluation::{extract_pairs, DecodeMode, Span, SpanKind, TermPolarityPair};
use dregcn_core::heads::{message_input_dim, MessagePassingConfig, MessageVariant, AE_CLASSES, AS_CLASSES};
use dregcn_core::training::TrainConfig;

const FIXTURE: &str = include_str!("../../../docs/fixture/corpus.txt");

#[test]
fn coffee_sentence_tree() {
    let corpus = parse_corpus_file(FIXTURE).unwrap();
    let s = &corpus[0];
    let at = |w: &str| s.tokens.iter().position(|t| t == w).unwrap();
    assert_eq!(s.heads[at("cosi")], Head::Token(at("sandwiches")));
    assert_eq!(s.deprels[at("cosi")], "compound");
    assert_eq!(s.deprels[at("overpriced")], "amod");
    assert_eq!(s.heads[at("overpriced")], Head::Token(at("sandwiches")));
    assert_eq!(s.deprels[at("Coffee")], "nsubj");

    let pairs = extract_pairs(&s.ae_tags, &s.as_tags, DecodeMode::Lenient);
    let spans: Vec<(usize, usize, Polarity)> = pairs.iter().map(|p| (p.span.start, p.span.end, p.polarity)).collect();
    assert_eq!(spans, [(0, 1, Polarity::Pos), (7, 9, Polarity::Neg)]);
}

#[test]
fn multi_token_aspect_takes_first_token_polarity() {
    let pairs = extract_pairs(
        &[AeTag::BA, AeTag::IA],
        &[Some(Polarity::Neg), Some(Polarity::Pos)],
        DecodeMode::Lenient,
    );
    assert_eq!(
        pairs,
        [TermPolarityPair {
            span: Span {
                start: 0,
                end: 2,
                kind: SpanKind::Aspect
            },
            polarity: Polarity::Neg
        }]
    );
}

#[test]
fn fixture_counts_terms_not_tokens() {
    let stats = corpus_stats(&parse_corpus_file(FIXTURE).unwrap());
    assert_eq!((stats.sentences, stats.aspect_terms, stats.opinion_terms), (3, 4, 4));
}

#[test]
fn self_loops_have_their_own_relation() {
    let corpus = parse_corpus_file(FIXTURE).unwrap();
    let vocab = RelationVocab::from_corpus(&corpus, false, false);
    assert_eq!(vocab.names()[vocab.self_index()], "SELF");
    assert!(vocab.names().iter().any(|n| n == "compound"));
}

#[test]
fn training_defaults() {
    let c = TrainConfig::default();
    assert_eq!(c.lr, 0.0005);
    assert_eq!(c.batch_size, 50);
    assert_eq!(c.dev_ratio, 0.2);
    assert_eq!(c.runs, 5);
}

#[test]
fn label_sets_and_message_widths() {
    assert_eq!((AE_CLASSES, AS_CLASSES), (5, 3));
    let mut cfg = MessagePassingConfig {
        variant: MessageVariant::Predictions,
        ..Default::default()
    };
    assert_eq!(message_input_dim(&cfg, 10, 4), 10 + 5 + 3);
    cfg.variant = MessageVariant::Representations;
    assert_eq!(message_input_dim(&cfg, 10, 4), 10 + 4 + 2 * 4);
    cfg.pass_pre_attention_as = true;
    assert_eq!(message_input_dim(&cfg, 10, 4), 10 + 2 * 4);
}
