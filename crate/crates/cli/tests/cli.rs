use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dregcn_core::corpus::{parse_corpus_file, write_corpus};
use dregcn_core::synthetic::separability_corpus;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/fixture").join(name)
}

fn dregcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dregcn"))
        .args(args)
        .env_remove("DREGCN_CONFIG_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_fixture(out: &Path, extra: &[&str]) -> Output {
    let config = fixture("dregcn.toml");
    let mut args = vec!["train", "--config", s(&config), "--out", s(out)];
    args.extend_from_slice(extra);
    dregcn(&args)
}

#[test]
fn train_writes_one_checkpoint_per_run_and_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = train_fixture(&out, &["--runs", "1", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("run-0.ckpt").exists());
    assert!(!out.join("run-1.ckpt").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([7]));
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 1);
    assert_eq!(manifest["runs"][0]["history"].as_array().unwrap().len(), 5);
    let digest = manifest["inputs"]["corpus"]["sha256"].as_str().unwrap();
    assert_eq!(digest.len(), 64);
    assert!(manifest["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(stdout(&o), std::fs::read_to_string(out.join("metrics.txt")).unwrap());
}

#[test]
fn repeated_training_gives_identical_manifests_apart_from_time() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let read = || {
        let mut m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        m.as_object_mut().unwrap().remove("wall_clock_seconds");
        m
    };
    assert!(train_fixture(&out, &["--runs", "2"]).status.success());
    let first = read();
    let ckpt = std::fs::read(out.join("run-1.ckpt")).unwrap();
    assert!(train_fixture(&out, &["--runs", "2"]).status.success());
    assert_eq!(first, read());
    assert_eq!(ckpt, std::fs::read(out.join("run-1.ckpt")).unwrap());
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = train_fixture(&out, &["--mode", "vanilla_gcn", "--mp-variant", "none", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["model"]["encoder"]["mode"], "vanilla_gcn");
    assert_eq!(manifest["config"]["model"]["message"]["variant"], "none");
    assert_eq!(manifest["config"]["train"]["seed"], 3);
    assert_eq!(manifest["config"]["train"]["epochs"], 5);
}

#[test]
fn config_directory_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    for f in ["corpus.txt", "general.vec", "domain.vec", "dregcn.toml"] {
        std::fs::copy(fixture(f), tmp.path().join(f)).unwrap();
    }
    let out = tmp.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_dregcn"))
        .args(["train", "--out", s(&out)])
        .env("DREGCN_CONFIG_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("run-0.ckpt").exists());
}

#[test]
fn unknown_config_key_is_a_usage_error_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "hidden = 8\nlearning_rate = 0.1\n").unwrap();
    let o = dregcn(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(dregcn(&["train"]).status.code(), Some(1));
    assert_eq!(dregcn(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dregcn(&["train", "--mode", "lstm"]).status.code(), Some(1));
    assert_eq!(dregcn(&["evaluate", "--test-corpus", "x.txt"]).status.code(), Some(1));
    assert_eq!(dregcn(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.txt");
    assert_eq!(dregcn(&["train", "--corpus", s(&missing)]).status.code(), Some(2));
    let bad = tmp.path().join("bad.txt");
    std::fs::write(&bad, "a BA none ROOT root\n").unwrap();
    let o = dregcn(&["stats", "--corpus", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

struct Trained {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

impl Trained {
    fn ckpt(&self) -> PathBuf {
        self.dir.join("run-0.ckpt")
    }
}

fn trained() -> Trained {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let corpus = fixture("corpus.txt");
    let o = train_fixture(&dir, &["--runs", "1", "--dev-corpus", s(&corpus)]);
    assert!(o.status.success(), "{}", stderr(&o));
    Trained { _tmp: tmp, dir }
}

fn kv(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(|l| {
            let (k, v) = l.split_once(" = ").expect("key = value");
            (k.to_string(), v.to_string())
        })
        .collect()
}

#[test]
fn evaluate_reports_five_scores_that_match_the_manifest() {
    let t = trained();
    let corpus = fixture("corpus.txt");
    let o = dregcn(&["evaluate", "--checkpoint", s(&t.ckpt()), "--test-corpus", s(&corpus)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = kv(&stdout(&o));
    let keys: Vec<&str> = report.iter().map(|(k, _)| k.as_str()).collect();
    assert_eq!(&keys[..5], ["f1_a", "f1_o", "acc_s", "f1_s", "f1_i"]);
    assert!(keys[5..].iter().all(|k| k.contains('.')));
    assert!(keys.contains(&"pairs.tp"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(t.dir.join("manifest.json")).unwrap()).unwrap();
    let metrics = &manifest["runs"][0]["metrics"];
    for (k, v) in &report[..5] {
        let want = format!("{:.2}", 100.0 * metrics[k].as_f64().unwrap());
        assert_eq!(v, &want, "{k}");
    }

    let out = t.dir.join("report.txt");
    let o = dregcn(&[
        "evaluate",
        "--checkpoint",
        s(&t.ckpt()),
        "--test-corpus",
        s(&corpus),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success());
    assert_eq!(kv(&std::fs::read_to_string(out).unwrap()), report);
}

#[test]
fn evaluate_rejects_empty_corpus_and_mismatched_embeddings() {
    let t = trained();
    let empty = t.dir.join("empty.txt");
    std::fs::write(&empty, "\n").unwrap();
    let o = dregcn(&["evaluate", "--checkpoint", s(&t.ckpt()), "--test-corpus", s(&empty)]);
    assert_eq!(o.status.code(), Some(2));

    let wide = t.dir.join("wide.vec");
    std::fs::write(&wide, "Coffee 1 2 3 4 5 6 7\n").unwrap();
    let corpus = fixture("corpus.txt");
    let o = dregcn(&[
        "evaluate",
        "--checkpoint",
        s(&t.ckpt()),
        "--test-corpus",
        s(&corpus),
        "--general-emb",
        s(&wide),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("incompatible"), "{}", stderr(&o));
}

#[test]
fn predict_output_parses_and_is_deterministic() {
    let t = trained();
    let raw = t.dir.join("raw.txt");
    std::fs::write(
        &raw,
        "the O none 1 det\nkeyboard O none ROOT root\n\nwow O none ROOT root\n",
    )
    .unwrap();
    let run = || dregcn(&["predict", "--checkpoint", s(&t.ckpt()), "--test-corpus", s(&raw)]);
    let first = run();
    assert!(first.status.success(), "{}", stderr(&first));
    let text = stdout(&first);
    let parsed = parse_corpus_file(&text).unwrap();
    assert_eq!(parsed.len(), 2);
    assert_eq!(parsed[1].len(), 1);
    assert_eq!(parsed[0].tokens, ["the", "keyboard"]);
    for s in &parsed {
        for (t, p) in s.ae_tags.iter().zip(&s.as_tags) {
            assert_eq!(t.is_aspect(), p.is_some());
        }
    }
    assert_eq!(text, stdout(&run()));
}

#[test]
fn stats_counts_fixture_terms() {
    let corpus = fixture("corpus.txt");
    let o = dregcn(&["stats", "--corpus", s(&corpus)]);
    assert!(o.status.success());
    assert_eq!(
        stdout(&o),
        "corpus.sentences = 3\ncorpus.aspect_terms = 4\ncorpus.opinion_terms = 4\n"
    );
}

#[test]
fn gradcheck_passes_and_lists_every_check() {
    let o = dregcn(&["gradcheck"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let names: Vec<&str> = text.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    for want in [
        "matmul",
        "softmax_cross_entropy",
        "masked_softmax",
        "unfold",
        "gcn_layer",
        "dregcn_layer",
        "cnn_encoder",
        "ae_head",
        "as_head",
        "message_pass_predictions",
        "message_pass_representations",
        "full_model",
    ] {
        assert!(names.contains(&want), "{want} missing from\n{text}");
    }
    assert!(text.lines().all(|l| l.ends_with("pass")));
}

#[test]
fn corrupted_backward_rule_fails_gradcheck() {
    let o = dregcn(&["gradcheck", "--inject-fault", "matmul"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("FAIL"));
    assert!(stderr(&o).contains("matmul"), "{}", stderr(&o));
    assert_eq!(dregcn(&["gradcheck", "--inject-fault", "bogus"]).status.code(), Some(1));
}

fn ablation_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect()
}

#[test]
fn ablation_has_six_labelled_rows() {
    let config = fixture("dregcn.toml");
    let o = dregcn(&["ablate", "--config", s(&config), "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = ablation_rows(&stdout(&o));
    let labels: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(
        labels,
        [
            "CNN",
            "Vanilla GCN",
            "DreGCN",
            "+Opinion-passing",
            "+Message-passing predictions",
            "+Message-passing representations"
        ]
    );
    let configs: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(configs[0], "cnn_only");
    assert_eq!(configs[5], "dregcn+opinion+message-representations");
    for r in &rows {
        let f: f64 = r[3].parse().unwrap();
        assert!((0.0..=100.0).contains(&f));
    }
}

#[test]
fn ablation_separates_relation_types() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("train.txt");
    let dev = tmp.path().join("dev.txt");
    std::fs::write(&corpus, write_corpus(&separability_corpus(150, 41))).unwrap();
    std::fs::write(&dev, write_corpus(&separability_corpus(60, 42))).unwrap();
    let cfg = tmp.path().join("sep.toml");
    std::fs::write(
        &cfg,
        "hidden = 16\nrelation_dim = 8\ngeneral_dim = 8\ndomain_dim = 4\ntask_hidden = 8\n\
         cnn_layers = 1\nepochs = 25\nbatch_size = 20\nlr = 0.01\ndropout = 0.0\nruns = 1\n",
    )
    .unwrap();
    let o = dregcn(&[
        "ablate",
        "--config",
        s(&cfg),
        "--corpus",
        s(&corpus),
        "--dev-corpus",
        s(&dev),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = ablation_rows(&stdout(&o));
    let f1 = |i: usize| rows[i][3].parse::<f64>().unwrap();
    assert!(f1(2) - f1(1) >= 30.0, "{}", stdout(&o));
}
