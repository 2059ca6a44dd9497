//! Seeded synthetic corpora for sanity experiments.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AeTag, Head, Polarity, Sentence};

const RELATIONS: [&str; 7] = ["nsubj", "amod", "det", "dobj", "prep", "pobj", "compound"];

/// Random dependency tree over `n` tokens: a random root, every other token
/// attached to a token placed before it in a random order.
fn random_tree<R: Rng>(n: usize, rng: &mut R) -> Vec<Head> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut heads = vec![Head::Root; n];
    for k in 1..n {
        heads[order[k]] = Head::Token(order[rng.gen_range(0..k)]);
    }
    heads
}

/// Random BIO tags with aspect spans of one or two tokens (one polarity per
/// span) and single-token opinion spans.
fn random_tags<R: Rng>(n: usize, rng: &mut R) -> (Vec<AeTag>, Vec<Option<Polarity>>) {
    let mut ae = vec![AeTag::O; n];
    let mut as_ = vec![None; n];
    let mut i = 0;
    while i < n {
        let r: f64 = rng.gen();
        if r < 0.3 {
            let len = if i + 1 < n && rng.gen_bool(0.4) { 2 } else { 1 };
            let p = Polarity::from_index(rng.gen_range(0..3));
            for k in 0..len {
                ae[i + k] = if k == 0 { AeTag::BA } else { AeTag::IA };
                as_[i + k] = Some(p);
            }
            i += len;
        } else {
            if r < 0.5 {
                ae[i] = AeTag::BP;
            }
            i += 1;
        }
    }
    (ae, as_)
}

/// `count` sentences of 3 to 7 tokens over a vocabulary of 30 words, with
/// random trees and tags.
pub fn overfit_corpus(count: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(3..=7);
            let tokens = (0..n).map(|_| format!("w{}", rng.gen_range(0..30))).collect();
            let heads = random_tree(n, &mut rng);
            let rels = heads
                .iter()
                .map(|h| match h {
                    Head::Root => "root".to_string(),
                    Head::Token(_) => RELATIONS[rng.gen_range(0..RELATIONS.len())].to_string(),
                })
                .collect();
            let (ae, as_) = random_tags(n, &mut rng);
            Sentence::new(tokens, ae, as_, heads, rels).expect("generated sentence is valid")
        })
        .collect()
}

/// Relations of the separability corpus and the tags they imply on the
/// dependent token.
pub const SEPARABILITY_RULES: [(&str, AeTag, Option<Polarity>); 4] = [
    ("nsubj", AeTag::BA, Some(Polarity::Pos)),
    ("dobj", AeTag::BA, Some(Polarity::Neg)),
    ("amod", AeTag::BP, None),
    ("det", AeTag::O, None),
];

pub const SEPARABILITY_WORD: &str = "w";
pub const SEPARABILITY_LEAVES: usize = 3;

/// Star-shaped sentences: one root (tagged `O`) at a random position and
/// three leaves whose relation, drawn uniformly from
/// [`SEPARABILITY_RULES`], fixes their tags. Every token is the same word,
/// so only relation types tell leaves apart.
pub fn separability_corpus(count: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = SEPARABILITY_LEAVES + 1;
    (0..count)
        .map(|_| {
            let root = rng.gen_range(0..n);
            let mut heads = vec![Head::Token(root); n];
            let mut rels = vec![String::new(); n];
            let mut ae = vec![AeTag::O; n];
            let mut as_ = vec![None; n];
            heads[root] = Head::Root;
            rels[root] = "root".into();
            for i in (0..n).filter(|&i| i != root) {
                let (rel, tag, pol) = SEPARABILITY_RULES[rng.gen_range(0..SEPARABILITY_RULES.len())];
                rels[i] = rel.into();
                ae[i] = tag;
                as_[i] = pol;
            }
            let tokens = vec![SEPARABILITY_WORD.to_string(); n];
            Sentence::new(tokens, ae, as_, heads, rels).expect("generated sentence is valid")
        })
        .collect()
}
