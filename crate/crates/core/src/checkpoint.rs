//! Versioned text checkpoints.
//!
//! ```text
//! dregcn-checkpoint 1
//! {"network": ..., "params": [{"name": ..., "shape": [..], "frozen": false}, ...]}
//! param <name>
//! <16-hex-digit IEEE-754 bit patterns, 8 per line>
//! ...
//! end
//! ```
//!
//! Values are stored as raw bit patterns, so a load reproduces every
//! parameter exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, Network};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &str = "dregcn-checkpoint";
pub const VERSION: u32 = 1;
const PER_LINE: usize = 8;

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
    frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    network: Network,
    params: Vec<ParamHeader>,
}

pub fn save_checkpoint(model: &Model) -> String {
    let store = &model.params;
    let header = Header {
        network: model.network.clone(),
        params: store
            .ids()
            .map(|id| ParamHeader {
                name: store.name(id).to_string(),
                shape: store.get(id).shape().to_vec(),
                frozen: store.is_frozen(id),
            })
            .collect(),
    };
    let mut out = format!("{MAGIC} {VERSION}\n");
    out.push_str(&serde_json::to_string(&header).expect("header serialises"));
    out.push('\n');
    for id in store.ids() {
        let _ = writeln!(out, "param {}", store.name(id));
        for chunk in store.get(id).data().chunks(PER_LINE) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("line {line}: {msg}"))
}

pub fn load_checkpoint(text: &str) -> Result<Model> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
    let version = first
        .strip_prefix(MAGIC)
        .map(str::trim)
        .ok_or_else(|| bad(1, "not a checkpoint"))?;
    if version != VERSION.to_string() {
        return Err(bad(1, format!("unsupported version {version}")));
    }
    let (_, header_line) = lines.next().ok_or_else(|| bad(2, "missing header"))?;
    let header: Header = serde_json::from_str(header_line).map_err(|e| bad(2, e))?;
    let mut network = header.network;
    network.reindex();

    let mut store = ParamStore::new();
    let mut line_no = 2;
    for p in &header.params {
        let (n, l) = lines.next().ok_or_else(|| bad(line_no + 1, "truncated"))?;
        line_no = n;
        let name = l.strip_prefix("param ").ok_or_else(|| bad(n, "expected `param <name>`"))?;
        if name != p.name {
            return Err(bad(n, format!("expected parameter {}, found {name}", p.name)));
        }
        let count: usize = p.shape.iter().product();
        let mut data = Vec::with_capacity(count);
        while data.len() < count {
            let (n, l) = lines.next().ok_or_else(|| bad(line_no + 1, "truncated"))?;
            line_no = n;
            for word in l.split_whitespace() {
                let bits = u64::from_str_radix(word, 16).map_err(|_| bad(n, format!("`{word}` is not hex")))?;
                data.push(f64::from_bits(bits));
            }
        }
        if data.len() != count {
            return Err(bad(line_no, format!("{} holds {} values, expected {count}", p.name, data.len())));
        }
        let id = store.add(p.name.clone(), Tensor::new(p.shape.clone(), data)?);
        store.freeze(id, p.frozen);
    }
    match lines.next() {
        Some((_, "end")) => {}
        Some((n, _)) => return Err(bad(n, "expected `end`")),
        None => return Err(bad(line_no + 1, "missing `end`")),
    }
    Ok(Model { network, params: store })
}

pub fn write_checkpoint(path: &Path, model: &Model) -> Result<()> {
    std::fs::write(path, save_checkpoint(model))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Model> {
    load_checkpoint(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corpus_words, parse_corpus_file, EmbeddingMatrix, RelationVocab};
    use crate::encoder::EncoderConfig;
    use crate::model::ModelConfig;

    fn model() -> (Model, Vec<crate::corpus::Sentence>) {
        let corpus = parse_corpus_file("a\tBA\tneu\tROOT\troot\nb\tBP\tnone\t0\tamod\n").unwrap();
        let words = corpus_words([corpus.as_slice()]);
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                hidden: 4,
                relation_dim: 2,
                ..Default::default()
            },
            general_dim: 3,
            domain_dim: 2,
            ..Default::default()
        };
        let m = Model::new(
            &cfg,
            RelationVocab::from_corpus(&corpus, false, true),
            EmbeddingMatrix::random(words.iter().cloned(), 3, 1),
            EmbeddingMatrix::random(words.iter().cloned(), 2, 2),
            5,
        )
        .unwrap();
        (m, corpus)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (mut m, corpus) = model();
        let id = m.params.ids().nth(3).unwrap();
        m.params.get_mut(id).data_mut()[0] = -0.0;
        let text = save_checkpoint(&m);
        let back = load_checkpoint(&text).unwrap();
        assert_eq!(back.network, m.network);
        for id in m.params.ids() {
            let a: Vec<u64> = m.params.get(id).data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.params.get(id).data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
            assert_eq!(m.params.is_frozen(id), back.params.is_frozen(id));
        }
        assert_eq!(save_checkpoint(&back), text);
        assert_eq!(back.predict(&corpus[0]).unwrap(), m.predict(&corpus[0]).unwrap());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (m, _) = model();
        let text = save_checkpoint(&m);
        assert!(load_checkpoint("").is_err());
        assert!(load_checkpoint(&text.replace("dregcn-checkpoint 1", "dregcn-checkpoint 9")).is_err());
        assert!(load_checkpoint(text.trim_end().trim_end_matches("end")).is_err());
        let mut lines: Vec<&str> = text.lines().collect();
        lines[3] = "zz";
        assert!(load_checkpoint(&lines.join("\n")).is_err());
    }
}
