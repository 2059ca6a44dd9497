use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::Serialize;
use sha2::{Digest, Sha256};

use dregcn_core::checkpoint::{read_checkpoint, save_checkpoint};
use dregcn_core::corpus::{
    corpus_stats, corpus_words, load_embedding_table_filtered, parse_corpus_file,
    parse_corpus_unlabeled, write_corpus, EmbeddingMatrix, RelationVocab, Sentence,
};
use dregcn_core::encoder::EncoderMode;
use dregcn_core::evaluation::{decode_spans, encode_spans, DecodeMode, MetricReport, Prediction};
use dregcn_core::heads::MessageVariant;
use dregcn_core::model::{Model, ModelConfig};
use dregcn_core::tape::OpKind;
use dregcn_core::training::{evaluate_model, multi_run, predict_all, EpochRecord, MultiRunReport};
use dregcn_core::verify::standard_checks;

use crate::config::{load_file, locate, resolve, ConfigError, FileConfig, Resolved};
use crate::{CommonArgs, GradcheckArgs};

/// Input data that cannot be used.
#[derive(Debug)]
struct DataError(String);

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DataError {}

/// A verification step found a discrepancy.
#[derive(Debug)]
struct VerificationFailed(String);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for VerificationFailed {}

/// 1 for usage and configuration errors, 3 for verification failures, 2 for
/// everything else (unreadable or invalid data).
pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ConfigError>().is_some() {
        1
    } else if e.downcast_ref::<VerificationFailed>().is_some() {
        3
    } else {
        2
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn data(msg: impl Into<String>) -> anyhow::Error {
    DataError(msg.into()).into()
}

fn settings(args: &CommonArgs) -> anyhow::Result<Resolved> {
    let file = match locate(args.config.as_deref(), args.config_dir.as_deref())? {
        Some(path) => load_file(&path)?,
        None => FileConfig::default(),
    };
    resolve(file, args)
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
    path.as_deref().ok_or_else(|| usage(format!("missing required --{flag}")))
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_corpus(path: &Path) -> anyhow::Result<Vec<Sentence>> {
    let corpus = parse_corpus_file(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    if corpus.is_empty() {
        return Err(data(format!("{} contains no sentences", path.display())));
    }
    Ok(corpus)
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn sha256_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn write_output(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Embedding tables from files (restricted to `words`), or seeded random
/// tables of the configured widths.
fn embeddings(
    cfg: &Resolved,
    words: &std::collections::BTreeSet<String>,
    seed: u64,
) -> anyhow::Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    let table = |path: &Option<PathBuf>, dim: usize, salt: u64| -> anyhow::Result<EmbeddingMatrix> {
        let seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(salt);
        match path {
            Some(p) => load_embedding_table_filtered(&read(p)?, dim, seed, Some(words))
                .with_context(|| format!("loading embeddings {}", p.display())),
            None => Ok(EmbeddingMatrix::random(words.iter().cloned(), dim, seed)),
        }
    };
    Ok((
        table(&cfg.general_emb, cfg.model.general_dim, 1)?,
        table(&cfg.domain_emb, cfg.model.domain_dim, 2)?,
    ))
}

struct Data {
    train: Vec<Sentence>,
    dev: Option<Vec<Sentence>>,
    test: Option<Vec<Sentence>>,
}

fn load_data(cfg: &Resolved) -> anyhow::Result<Data> {
    let train = read_corpus(require(&cfg.corpus, "corpus")?)?;
    let dev = cfg.dev_corpus.as_deref().map(read_corpus).transpose()?;
    let test = cfg.test_corpus.as_deref().map(read_corpus).transpose()?;
    Ok(Data { train, dev, test })
}

fn run_experiment(cfg: &Resolved, model_cfg: &ModelConfig, d: &Data) -> anyhow::Result<MultiRunReport> {
    let mut all: Vec<&[Sentence]> = vec![&d.train];
    all.extend(d.dev.as_deref());
    all.extend(d.test.as_deref());
    let words = corpus_words(all);
    let relations = RelationVocab::from_corpus(&d.train, model_cfg.distinct_reverse_types, model_cfg.unknown_relations);
    let report = multi_run(&d.train, d.dev.as_deref(), d.test.as_deref(), &cfg.train, |seed| {
        let (g, dm) = embeddings(cfg, &words, seed).map_err(|e| dregcn_core::Error::Contract(format!("{e:#}")))?;
        Model::new(model_cfg, relations.clone(), g, dm, seed)
    })?;
    Ok(report)
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunEntry {
    seed: u64,
    best_epoch: Option<usize>,
    history: Vec<EpochRecord>,
    metrics: MetricReport,
    checkpoint: String,
    checkpoint_sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    format: &'static str,
    config: Resolved,
    seeds: Vec<u64>,
    inputs: BTreeMap<&'static str, InputDigest>,
    runs: Vec<RunEntry>,
    average: MetricReport,
    wall_clock_seconds: f64,
}

fn input_digests(cfg: &Resolved) -> anyhow::Result<BTreeMap<&'static str, InputDigest>> {
    let mut out = BTreeMap::new();
    for (role, path) in [
        ("corpus", &cfg.corpus),
        ("dev_corpus", &cfg.dev_corpus),
        ("test_corpus", &cfg.test_corpus),
        ("general_emb", &cfg.general_emb),
        ("domain_emb", &cfg.domain_emb),
    ] {
        if let Some(p) = path {
            out.insert(
                role,
                InputDigest {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                },
            );
        }
    }
    Ok(out)
}

pub const DEFAULT_OUT_DIR: &str = "dregcn-out";

pub fn train(args: &CommonArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let cfg = settings(args)?;
    let inputs = input_digests(&cfg)?;
    let d = load_data(&cfg)?;
    let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let report = run_experiment(&cfg, &cfg.model, &d)?;
    let mut runs = Vec::new();
    for (r, run) in report.runs.iter().enumerate() {
        let name = format!("run-{r}.ckpt");
        let text = save_checkpoint(&run.outcome.model);
        std::fs::write(out_dir.join(&name), &text)?;
        runs.push(RunEntry {
            seed: run.seed,
            best_epoch: run.outcome.history.best_epoch,
            history: run.outcome.history.epochs.clone(),
            metrics: run.report.clone(),
            checkpoint: name,
            checkpoint_sha256: sha256_text(&text),
        });
    }
    if let Some(p) = &cfg.checkpoint {
        if let Some(first) = report.runs.first() {
            std::fs::write(p, save_checkpoint(&first.outcome.model)).with_context(|| format!("writing {}", p.display()))?;
        }
    }
    let kv = report.average.to_kv();
    std::fs::write(out_dir.join("metrics.txt"), &kv)?;
    let manifest = Manifest {
        format: "dregcn-manifest 1",
        seeds: runs.iter().map(|r| r.seed).collect(),
        config: cfg,
        inputs,
        runs,
        average: report.average,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    print!("{kv}");
    Ok(())
}

fn load_model(cfg: &Resolved) -> anyhow::Result<Model> {
    let path = require(&cfg.checkpoint, "checkpoint")?;
    let model = read_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let c = &model.network.config;
    for (flag, emb, dim) in [
        ("general-emb", &cfg.general_emb, c.general_dim),
        ("domain-emb", &cfg.domain_emb, c.domain_dim),
    ] {
        if let Some(p) = emb {
            let text = read(p)?;
            let width = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .map(|l| l.split_whitespace().count().saturating_sub(1));
            if width.is_some_and(|w| w != dim) {
                return Err(dregcn_core::Error::Incompatible(format!(
                    "--{flag} {} has {}-dimensional vectors, the checkpoint was trained with {dim}",
                    p.display(),
                    width.unwrap_or(0)
                ))
                .into());
            }
        }
    }
    Ok(model)
}

fn scoring_corpus(cfg: &Resolved) -> anyhow::Result<&Path> {
    cfg.test_corpus
        .as_deref()
        .or(cfg.corpus.as_deref())
        .ok_or_else(|| usage("missing required --test-corpus (or --corpus)"))
}

pub fn evaluate(args: &CommonArgs) -> anyhow::Result<()> {
    let cfg = settings(args)?;
    let model = load_model(&cfg)?;
    let corpus = read_corpus(scoring_corpus(&cfg)?)?;
    let report = evaluate_model(&model, &corpus)?;
    write_output(cfg.out.as_deref(), &report.to_kv())
}

/// Tags as written back out: the decoded spans re-encoded, with a polarity
/// on aspect tokens only.
fn output_tags(p: &Prediction, mode: DecodeMode) -> (Vec<dregcn_core::corpus::AeTag>, Vec<Option<dregcn_core::corpus::Polarity>>) {
    let ae = encode_spans(&decode_spans(&p.ae_tags, mode), p.ae_tags.len());
    let as_ = ae
        .iter()
        .zip(&p.as_tags)
        .map(|(t, &pol)| t.is_aspect().then_some(pol))
        .collect();
    (ae, as_)
}

pub fn predict(args: &CommonArgs) -> anyhow::Result<()> {
    let cfg = settings(args)?;
    let model = load_model(&cfg)?;
    let path = scoring_corpus(&cfg)?;
    let corpus = parse_corpus_unlabeled(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    if corpus.is_empty() {
        return Err(data(format!("{} contains no sentences", path.display())));
    }
    let predictions = predict_all(&model, &corpus)?;
    let mode = model.network.decode_mode();
    let tagged = corpus
        .iter()
        .zip(&predictions)
        .map(|(s, p)| {
            let (ae, as_) = output_tags(p, mode);
            Sentence::new(s.tokens.clone(), ae, as_, s.heads.clone(), s.deprels.clone())
        })
        .collect::<dregcn_core::Result<Vec<_>>>()?;
    write_output(cfg.out.as_deref(), &write_corpus(&tagged))
}

/// Ablation rows: configuration name, label, and the model settings.
pub fn ablation_rows(base: &ModelConfig) -> Vec<(&'static str, &'static str, ModelConfig)> {
    let with = |mode: EncoderMode, opinion: bool, variant: MessageVariant| {
        let mut c = base.clone();
        c.encoder.mode = mode;
        c.message.opinion_passing = opinion;
        c.message.variant = variant;
        if variant == MessageVariant::None {
            c.message.rounds = 0;
        } else if c.message.rounds == 0 {
            c.message.rounds = 1;
        }
        c
    };
    use EncoderMode::*;
    use MessageVariant as V;
    vec![
        ("cnn_only", "CNN", with(CnnOnly, false, V::None)),
        ("vanilla_gcn", "Vanilla GCN", with(VanillaGcn, false, V::None)),
        ("dregcn", "DreGCN", with(Dregcn, false, V::None)),
        ("dregcn+opinion-passing", "+Opinion-passing", with(Dregcn, true, V::None)),
        (
            "dregcn+opinion+message-predictions",
            "+Message-passing predictions",
            with(Dregcn, true, V::Predictions),
        ),
        (
            "dregcn+opinion+message-representations",
            "+Message-passing representations",
            with(Dregcn, true, V::Representations),
        ),
    ]
}

pub fn ablate(args: &CommonArgs) -> anyhow::Result<()> {
    let cfg = settings(args)?;
    let d = load_data(&cfg)?;
    let mut table = String::from("row\tconfiguration\tlabel\tf1_i\n");
    for (row, (name, label, model_cfg)) in ablation_rows(&cfg.model).into_iter().enumerate() {
        let report = run_experiment(&cfg, &model_cfg, &d)?;
        let _ = writeln!(table, "{row}\t{name}\t{label}\t{:.2}", 100.0 * report.average.f1_i);
    }
    match &cfg.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            std::fs::write(dir.join("ablation.tsv"), &table)?;
            print!("{table}");
            Ok(())
        }
        None => write_output(None, &table),
    }
}

fn fault_kind(name: &str) -> anyhow::Result<OpKind> {
    Ok(match name {
        "matmul" => OpKind::MatMul,
        "transpose" => OpKind::Transpose,
        "add" => OpKind::Add,
        "add_row" => OpKind::AddRow,
        "mul" => OpKind::Mul,
        "mul_row" => OpKind::MulRow,
        "scale" => OpKind::Scale,
        "concat" => OpKind::Concat,
        "relu" => OpKind::Relu,
        "softmax" => OpKind::Softmax,
        "masked_softmax" => OpKind::MaskedSoftmax,
        "gather" => OpKind::Gather,
        "unfold" => OpKind::Unfold,
        "sum" => OpKind::Sum,
        "nll" => OpKind::Nll,
        other => return Err(usage(format!("unknown operation `{other}` for --inject-fault"))),
    })
}

pub fn gradcheck(args: &GradcheckArgs) -> anyhow::Result<()> {
    settings(&args.common)?;
    let fault = args.inject_fault.as_deref().map(fault_kind).transpose()?;
    let checks = standard_checks(fault)?;
    let mut out = String::new();
    let mut failed = Vec::new();
    for c in &checks {
        let verdict = if c.passed() { "pass" } else { "FAIL" };
        let _ = writeln!(
            out,
            "{:<30} coordinates {:>5}  max_rel_error {:.3e}  {verdict}",
            c.name, c.coordinates, c.max_rel_error
        );
        if !c.passed() {
            failed.push(format!("{}: {}", c.name, c.offenders.join(", ")));
        }
    }
    write_output(args.common.out.as_deref(), &out)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(VerificationFailed(format!(
            "{} of {} gradient checks failed\n  {}",
            failed.len(),
            checks.len(),
            failed.join("\n  ")
        ))
        .into())
    }
}

pub fn stats(args: &CommonArgs) -> anyhow::Result<()> {
    let cfg = settings(args)?;
    let mut out = String::new();
    let mut any = false;
    for (role, path) in [
        ("corpus", &cfg.corpus),
        ("dev_corpus", &cfg.dev_corpus),
        ("test_corpus", &cfg.test_corpus),
    ] {
        if let Some(p) = path {
            any = true;
            let s = corpus_stats(&read_corpus(p)?);
            let _ = writeln!(out, "{role}.sentences = {}", s.sentences);
            let _ = writeln!(out, "{role}.aspect_terms = {}", s.aspect_terms);
            let _ = writeln!(out, "{role}.opinion_terms = {}", s.opinion_terms);
        }
    }
    if !any {
        return Err(anyhow!(usage("stats needs --corpus, --dev-corpus or --test-corpus")));
    }
    write_output(cfg.out.as_deref(), &out)
}
