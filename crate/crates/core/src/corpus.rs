//! Annotated sentences, dependency graphs and embedding tables.
//!
//! Corpus files hold one token per line and a blank line between sentences.
//! Each token line has five whitespace-separated columns:
//!
//! ```text
//! surface  ae_tag  as_tag  head  deprel
//! ```
//!
//! `ae_tag` is one of `BA IA BP IP O`, `as_tag` one of `pos neg neu none`,
//! `head` is the 0-based index of the syntactic head or the literal `ROOT`.
//! Lines starting with `#` are comments.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{decode_spans, DecodeMode, SpanKind};
use crate::tensor::Tensor;

/// Relation type attached to self-loops.
pub const SELF_RELATION: &str = "SELF";
/// Catch-all relation used for names missing from a vocabulary when the
/// unknown bucket is enabled.
pub const UNKNOWN_RELATION: &str = "<unk>";
const REVERSE_PREFIX: &str = "rev:";

/// Aspect/opinion BIO tags. The discriminant is the class index used by the
/// AE head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AeTag {
    BA = 0,
    IA = 1,
    BP = 2,
    IP = 3,
    O = 4,
}

impl AeTag {
    pub const ALL: [AeTag; 5] = [AeTag::BA, AeTag::IA, AeTag::BP, AeTag::IP, AeTag::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> AeTag {
        AeTag::ALL[i]
    }

    pub fn is_aspect(self) -> bool {
        matches!(self, AeTag::BA | AeTag::IA)
    }

    pub fn is_opinion(self) -> bool {
        matches!(self, AeTag::BP | AeTag::IP)
    }
}

impl FromStr for AeTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "BA" => AeTag::BA,
            "IA" => AeTag::IA,
            "BP" => AeTag::BP,
            "IP" => AeTag::IP,
            "O" => AeTag::O,
            _ => return Err(format!("unknown aspect/opinion tag `{s}`")),
        })
    }
}

impl fmt::Display for AeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AeTag::BA => "BA",
            AeTag::IA => "IA",
            AeTag::BP => "BP",
            AeTag::IP => "IP",
            AeTag::O => "O",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Pos = 0,
    Neg = 1,
    Neu = 2,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Pos, Polarity::Neg, Polarity::Neu];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Polarity {
        Polarity::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            Polarity::Pos => "pos",
            Polarity::Neg => "neg",
            Polarity::Neu => "neu",
        }
    }
}

fn parse_polarity(s: &str) -> std::result::Result<Option<Polarity>, String> {
    Ok(match s {
        "pos" => Some(Polarity::Pos),
        "neg" => Some(Polarity::Neg),
        "neu" => Some(Polarity::Neu),
        "none" => None,
        _ => return Err(format!("unknown sentiment tag `{s}`")),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Root,
    Token(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub ae_tags: Vec<AeTag>,
    pub as_tags: Vec<Option<Polarity>>,
    pub heads: Vec<Head>,
    pub deprels: Vec<String>,
}

/// Which token a validation failure refers to, if any.
type Invalid = (Option<usize>, String);

impl Sentence {
    pub fn new(
        tokens: Vec<String>,
        ae_tags: Vec<AeTag>,
        as_tags: Vec<Option<Polarity>>,
        heads: Vec<Head>,
        deprels: Vec<String>,
    ) -> Result<Self> {
        let s = Sentence {
            tokens,
            ae_tags,
            as_tags,
            heads,
            deprels,
        };
        s.check().map_err(|(_, msg)| Error::Contract(msg))?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn check(&self) -> std::result::Result<(), Invalid> {
        let n = self.tokens.len();
        if n == 0 {
            return Err((None, "empty sentence".into()));
        }
        if [self.ae_tags.len(), self.as_tags.len(), self.heads.len(), self.deprels.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err((None, "columns have different lengths".into()));
        }
        for i in 0..n {
            let aspect = self.ae_tags[i].is_aspect();
            match (aspect, self.as_tags[i]) {
                (true, None) => {
                    return Err((Some(i), format!("aspect token `{}` has no sentiment", self.tokens[i])))
                }
                (false, Some(p)) => {
                    return Err((
                        Some(i),
                        format!(
                            "token `{}` tagged {} carries sentiment {}",
                            self.tokens[i],
                            self.ae_tags[i],
                            p.name()
                        ),
                    ))
                }
                _ => {}
            }
            if let Head::Token(h) = self.heads[i] {
                if h >= n {
                    return Err((Some(i), format!("head {h} outside sentence of {n} tokens")));
                }
                if h == i {
                    return Err((Some(i), "token is its own head".into()));
                }
            }
        }
        let roots = self.heads.iter().filter(|h| **h == Head::Root).count();
        if roots != 1 {
            return Err((None, format!("expected exactly one ROOT head, found {roots}")));
        }
        Ok(())
    }

    /// Dependency arcs as `(head, dependent, relation)`.
    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize, &str)> {
        self.heads.iter().enumerate().filter_map(move |(d, h)| match h {
            Head::Root => None,
            Head::Token(h) => Some((*h, d, self.deprels[d].as_str())),
        })
    }
}

fn parse_tag_column(raw: &str) -> std::result::Result<AeTag, String> {
    // A combined tag such as `BA|BP` would place one token in both an aspect
    // and an opinion term.
    let parts: Vec<&str> = raw.split(['|', '+']).collect();
    if parts.len() > 1 {
        let tags = parts
            .iter()
            .map(|p| p.parse::<AeTag>())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if tags.iter().any(|t| t.is_aspect()) && tags.iter().any(|t| t.is_opinion()) {
            return Err(format!("`{raw}` puts a token in both an aspect and an opinion term"));
        }
        return Err(format!("`{raw}` assigns more than one tag"));
    }
    raw.parse()
}

/// Parses every sentence in a corpus file.
pub fn parse_corpus_file(text: &str) -> Result<Vec<Sentence>> {
    parse_blocks(text, true)
}

/// Parses a corpus whose tag columns are placeholders: only surface forms and
/// the dependency columns are read, tags are set to `O`/`none`.
pub fn parse_corpus_unlabeled(text: &str) -> Result<Vec<Sentence>> {
    parse_blocks(text, false)
}

fn parse_blocks(text: &str, labeled: bool) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.starts_with('#') {
            continue;
        }
        if trimmed.is_empty() {
            if !block.is_empty() {
                out.push(parse_block(&block, labeled)?);
                block.clear();
            }
        } else {
            block.push((i + 1, trimmed));
        }
    }
    if !block.is_empty() {
        out.push(parse_block(&block, labeled)?);
    }
    Ok(out)
}

fn parse_block(lines: &[(usize, &str)], labeled: bool) -> Result<Sentence> {
    let n = lines.len();
    let mut s = Sentence {
        tokens: Vec::with_capacity(n),
        ae_tags: Vec::with_capacity(n),
        as_tags: Vec::with_capacity(n),
        heads: Vec::with_capacity(n),
        deprels: Vec::with_capacity(n),
    };
    for &(line, text) in lines {
        let cols: Vec<&str> = text.split_whitespace().collect();
        if cols.len() != 5 {
            return Err(Error::parse(line, format!("expected 5 columns, found {}", cols.len())));
        }
        let (ae, pol) = if labeled {
            (
                parse_tag_column(cols[1]).map_err(|m| Error::parse(line, m))?,
                parse_polarity(cols[2]).map_err(|m| Error::parse(line, m))?,
            )
        } else {
            (AeTag::O, None)
        };
        let head = if cols[3] == "ROOT" {
            Head::Root
        } else {
            let h = cols[3]
                .parse::<usize>()
                .map_err(|_| Error::parse(line, format!("bad head `{}`", cols[3])))?;
            Head::Token(h)
        };
        s.tokens.push(cols[0].to_string());
        s.ae_tags.push(ae);
        s.as_tags.push(pol);
        s.heads.push(head);
        s.deprels.push(cols[4].to_string());
    }
    s.check().map_err(|(tok, msg)| {
        let line = tok.map_or(lines[0].0, |t| lines[t].0);
        Error::parse(line, msg)
    })?;
    Ok(s)
}

/// Serialises sentences in the corpus column format.
pub fn write_corpus(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for (k, s) in sentences.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        for i in 0..s.len() {
            let pol = s.as_tags[i].map_or("none", Polarity::name);
            let head = match s.heads[i] {
                Head::Root => "ROOT".to_string(),
                Head::Token(h) => h.to_string(),
            };
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                s.tokens[i], s.ae_tags[i], pol, head, s.deprels[i]
            ));
        }
    }
    out
}

/// Dense index over dependency relation names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationVocab {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    distinct_reverse_types: bool,
    unknown_bucket: bool,
}

impl RelationVocab {
    /// Builds a vocabulary with `SELF` first followed by the sorted relation
    /// names found on arcs in `corpus`.
    pub fn from_corpus(corpus: &[Sentence], distinct_reverse_types: bool, unknown_bucket: bool) -> Self {
        let mut seen = BTreeSet::new();
        for s in corpus {
            for (_, _, rel) in s.arcs() {
                seen.insert(rel.to_string());
                if distinct_reverse_types {
                    seen.insert(format!("{REVERSE_PREFIX}{rel}"));
                }
            }
        }
        seen.remove(SELF_RELATION);
        seen.remove(UNKNOWN_RELATION);
        let mut names = vec![SELF_RELATION.to_string()];
        names.extend(seen);
        if unknown_bucket {
            names.push(UNKNOWN_RELATION.to_string());
        }
        Self::build(names, distinct_reverse_types, unknown_bucket)
    }

    /// Uses `names` in the given order. `SELF` must be among them.
    pub fn from_names(names: Vec<String>, distinct_reverse_types: bool, unknown_bucket: bool) -> Result<Self> {
        if !names.iter().any(|n| n == SELF_RELATION) {
            return Err(Error::Vocabulary(format!("relation vocabulary lacks {SELF_RELATION}")));
        }
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::Vocabulary("duplicate relation names".into()));
        }
        let mut names = names;
        if unknown_bucket && !names.iter().any(|n| n == UNKNOWN_RELATION) {
            names.push(UNKNOWN_RELATION.to_string());
        }
        Ok(Self::build(names, distinct_reverse_types, unknown_bucket))
    }

    fn build(names: Vec<String>, distinct_reverse_types: bool, unknown_bucket: bool) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        RelationVocab {
            names,
            index,
            distinct_reverse_types,
            unknown_bucket,
        }
    }

    /// Restores the name index after deserialisation.
    pub fn reindex(&mut self) {
        self.index = self.names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn distinct_reverse_types(&self) -> bool {
        self.distinct_reverse_types
    }

    pub fn self_index(&self) -> usize {
        self.index[SELF_RELATION]
    }

    pub fn lookup(&self, name: &str) -> Result<usize> {
        if let Some(&i) = self.index.get(name) {
            return Ok(i);
        }
        if self.unknown_bucket {
            return Ok(self.index[UNKNOWN_RELATION]);
        }
        Err(Error::Vocabulary(format!("unknown dependency relation `{name}`")))
    }

    fn reverse_lookup(&self, name: &str) -> Result<usize> {
        if self.distinct_reverse_types {
            self.lookup(&format!("{REVERSE_PREFIX}{name}"))
        } else {
            self.lookup(name)
        }
    }
}

/// Symmetric self-looped adjacency `A` and relation indicator `Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepGraph {
    n: usize,
    num_types: usize,
    adjacency: Tensor,
    // relation indices per ordered pair, row-major over (i, j)
    types: Vec<Vec<usize>>,
}

impl DepGraph {
    /// Assembles a graph from explicit parts and checks its invariants.
    pub fn from_parts(adjacency: Tensor, types: Vec<Vec<usize>>, num_types: usize) -> Result<Self> {
        let n = adjacency.rows();
        if adjacency.shape() != [n, n] || types.len() != n * n {
            return Err(Error::dim("dependency graph", adjacency.shape(), &[types.len()]));
        }
        let g = DepGraph {
            n,
            num_types,
            adjacency,
            types,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.adjacency.get(i, j)
    }

    pub fn q(&self, i: usize, j: usize, k: usize) -> bool {
        self.types[i * self.n + j].contains(&k)
    }

    pub fn types_between(&self, i: usize, j: usize) -> &[usize] {
        &self.types[i * self.n + j]
    }

    /// Checks symmetry, the unit diagonal, and `Q ⇒ A`.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        for i in 0..n {
            if self.a(i, i) != 1.0 {
                return Err(Error::Contract(format!("adjacency lacks self-loop at {i}")));
            }
            for j in 0..n {
                let a = self.a(i, j);
                if a != self.a(j, i) || (a != 0.0 && a != 1.0) {
                    return Err(Error::Contract(format!("adjacency not symmetric binary at ({i},{j})")));
                }
                let ts = self.types_between(i, j);
                if !ts.is_empty() && a == 0.0 {
                    return Err(Error::Contract(format!("relation type on non-edge ({i},{j})")));
                }
                if ts.iter().any(|&k| k >= self.num_types) {
                    return Err(Error::Contract(format!("relation index out of range at ({i},{j})")));
                }
            }
        }
        Ok(())
    }

    /// Degree-normalised `D^-1/2 A D^-1/2` when `normalize`, otherwise `A`.
    pub fn propagation_matrix(&self, normalize: bool) -> Tensor {
        if !normalize {
            return self.adjacency.clone();
        }
        let n = self.n;
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|i| 1.0 / self.adjacency.row(i).iter().sum::<f64>().sqrt())
            .collect();
        let mut out = self.adjacency.clone();
        for i in 0..n {
            for j in 0..n {
                let v = out.get(i, j) * inv_sqrt[i] * inv_sqrt[j];
                out.set(i, j, v);
            }
        }
        out
    }

    /// Operators for a relational layer: `P[i][j] = Â_ij · Σ_k Q_ijk` weights
    /// neighbour features, `G[i][k] = Σ_j Â_ij Q_ijk` weights relation rows.
    pub fn relational_operators(&self, normalize: bool) -> (Tensor, Tensor) {
        let a = self.propagation_matrix(normalize);
        let n = self.n;
        let mut agg = Tensor::zeros(&[n, n]);
        let mut type_agg = Tensor::zeros(&[n, self.num_types]);
        for i in 0..n {
            for j in 0..n {
                let ts = self.types_between(i, j);
                let w = a.get(i, j);
                if ts.is_empty() || w == 0.0 {
                    continue;
                }
                agg.set(i, j, w * ts.len() as f64);
                for &k in ts {
                    let cur = type_agg.get(i, k);
                    type_agg.set(i, k, cur + w);
                }
            }
        }
        (agg, type_agg)
    }
}

/// Builds `A` and `Q` for a sentence: every arc in both directions plus a
/// `SELF`-typed self-loop on each token.
pub fn build_dependency_graph(s: &Sentence, vocab: &RelationVocab) -> Result<DepGraph> {
    let n = s.len();
    let mut adjacency = Tensor::zeros(&[n, n]);
    let mut types = vec![Vec::new(); n * n];
    let self_k = vocab.self_index();
    for i in 0..n {
        adjacency.set(i, i, 1.0);
        types[i * n + i].push(self_k);
    }
    for (h, d, rel) in s.arcs() {
        let forward = vocab.lookup(rel)?;
        let reverse = vocab.reverse_lookup(rel)?;
        adjacency.set(h, d, 1.0);
        adjacency.set(d, h, 1.0);
        for (i, j, k) in [(h, d, forward), (d, h, reverse)] {
            let slot = &mut types[i * n + j];
            if !slot.contains(&k) {
                slot.push(k);
            }
        }
    }
    Ok(DepGraph {
        n,
        num_types: vocab.len(),
        adjacency,
        types,
    })
}

/// Word vectors with a trailing out-of-vocabulary row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    words: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Tensor,
}

/// Bound for randomly initialised embedding rows.
pub const EMBEDDING_INIT_BOUND: f64 = 0.05;

impl EmbeddingMatrix {
    pub fn from_parts(words: Vec<String>, matrix: Tensor) -> Result<Self> {
        if matrix.shape().len() != 2 || matrix.rows() != words.len() + 1 {
            return Err(Error::dim("embedding matrix", matrix.shape(), &[words.len() + 1]));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate word `{w}`")));
            }
        }
        Ok(EmbeddingMatrix { words, index, matrix })
    }

    /// Random rows for `words` (duplicates dropped) plus the OOV row.
    pub fn random(words: impl IntoIterator<Item = String>, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = BTreeSet::new();
        let words: Vec<String> = words.into_iter().filter(|w| seen.insert(w.clone())).collect();
        let matrix = Tensor::uniform(&[words.len() + 1, dim], EMBEDDING_INIT_BOUND, &mut rng);
        Self::from_parts(words, matrix).expect("unique words")
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Number of known words (excluding the OOV row).
    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn oov_index(&self) -> usize {
        self.words.len()
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn into_matrix(self) -> Tensor {
        self.matrix
    }

    /// Row index for `word`; exact match first, then lowercase, then OOV.
    pub fn lookup(&self, word: &str) -> usize {
        if let Some(&i) = self.index.get(word) {
            return i;
        }
        let lower = word.to_lowercase();
        self.index.get(&lower).copied().unwrap_or(self.oov_index())
    }

    pub fn vector(&self, word: &str) -> &[f64] {
        self.matrix.row(self.lookup(word))
    }
}

/// Reads a `word v1 … v_d` text table. Duplicate words keep their first
/// vector; the OOV row is drawn uniformly from ±0.05 using `seed`.
pub fn load_embedding_table(text: &str, expected_dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    load_embedding_table_filtered(text, expected_dim, seed, None)
}

/// As [`load_embedding_table`], keeping only words in `keep` when given.
pub fn load_embedding_table_filtered(
    text: &str,
    expected_dim: usize,
    seed: u64,
    keep: Option<&BTreeSet<String>>,
) -> Result<EmbeddingMatrix> {
    let mut words = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut data = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().unwrap_or_default();
        let values: Vec<&str> = parts.collect();
        if values.len() != expected_dim {
            return Err(Error::Format {
                line: i + 1,
                msg: format!("expected {expected_dim} values, found {}", values.len()),
            });
        }
        if keep.is_some_and(|k| !k.contains(word)) || seen.contains(word) {
            continue;
        }
        for v in values {
            let x: f64 = v.parse().map_err(|_| Error::Format {
                line: i + 1,
                msg: format!("`{v}` is not a number"),
            })?;
            data.push(x);
        }
        seen.insert(word.to_string());
        words.push(word.to_string());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let oov = Tensor::uniform(&[expected_dim], EMBEDDING_INIT_BOUND, &mut rng);
    data.extend_from_slice(oov.data());
    let matrix = Tensor::matrix(words.len() + 1, expected_dim, data)?;
    EmbeddingMatrix::from_parts(words, matrix)
}

/// Row `i` is the general-purpose vector of token `i` followed by its
/// domain-specific vector.
pub fn embed_tokens(s: &Sentence, general: &EmbeddingMatrix, domain: &EmbeddingMatrix) -> Tensor {
    let width = general.dim() + domain.dim();
    let mut data = Vec::with_capacity(s.len() * width);
    for w in &s.tokens {
        data.extend_from_slice(general.vector(w));
        data.extend_from_slice(domain.vector(w));
    }
    Tensor::matrix(s.len(), width, data).expect("consistent widths")
}

/// Distinct surface forms across corpora.
pub fn corpus_words<'a>(corpora: impl IntoIterator<Item = &'a [Sentence]>) -> BTreeSet<String> {
    corpora
        .into_iter()
        .flat_map(|c| c.iter().flat_map(|s| s.tokens.iter().cloned()))
        .collect()
}

/// Index partition of a corpus into train and development parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
}

/// Seeded random partition; the development part holds `round(ratio · N)`
/// sentences. Both parts keep corpus order.
pub fn split_indices(len: usize, ratio: f64, seed: u64) -> Result<SplitIndices> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Split(format!("ratio {ratio} outside (0, 1)")));
    }
    if len < 2 {
        return Err(Error::Split(format!("need at least 2 sentences, have {len}")));
    }
    let dev_size = (ratio * len as f64).round() as usize;
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut dev = order[..dev_size].to_vec();
    let mut train = order[dev_size..].to_vec();
    dev.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices { train, dev })
}

pub fn split_train_dev(corpus: &[Sentence], ratio: f64, seed: u64) -> Result<(Vec<Sentence>, Vec<Sentence>)> {
    let split = split_indices(corpus.len(), ratio, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect();
    Ok((pick(&split.train), pick(&split.dev)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub sentences: usize,
    pub aspect_terms: usize,
    pub opinion_terms: usize,
}

/// Sentence count and gold aspect/opinion span counts.
pub fn corpus_stats(corpus: &[Sentence]) -> CorpusStats {
    let mut stats = CorpusStats {
        sentences: corpus.len(),
        ..Default::default()
    };
    for s in corpus {
        for span in decode_spans(&s.ae_tags, DecodeMode::Lenient) {
            match span.kind {
                SpanKind::Aspect => stats.aspect_terms += 1,
                SpanKind::Opinion => stats.opinion_terms += 1,
            }
        }
    }
    stats
}
