//! Flat TOML run configuration. Precedence: command-line flag, then file,
//! then built-in default.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use dregcn_core::encoder::{EncoderConfig, EncoderMode};
use dregcn_core::evaluation::DecodeMode;
use dregcn_core::heads::{MessagePassingConfig, MessageVariant};
use dregcn_core::model::ModelConfig;
use dregcn_core::training::TrainConfig;

use crate::CommonArgs;

/// Environment variable naming the directory searched for relative
/// `--config` paths and for a default `dregcn.toml`.
pub const CONFIG_DIR_ENV: &str = "DREGCN_CONFIG_DIR";
pub const DEFAULT_CONFIG_NAME: &str = "dregcn.toml";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<EncoderMode>,
    pub mp_variant: Option<MessageVariant>,
    pub rounds: Option<usize>,
    pub opinion_passing: Option<bool>,
    pub pass_pre_attention_as: Option<bool>,
    pub gcn_layers: Option<usize>,
    pub cnn_layers: Option<usize>,
    pub kernel_widths: Option<Vec<usize>>,
    pub hidden: Option<usize>,
    pub relation_dim: Option<usize>,
    pub normalize_adjacency: Option<bool>,
    pub general_dim: Option<usize>,
    pub domain_dim: Option<usize>,
    pub task_hidden: Option<usize>,
    pub head_depth: Option<usize>,
    pub freeze_embeddings: Option<bool>,
    pub distinct_reverse_types: Option<bool>,
    pub unknown_relations: Option<bool>,
    pub decode: Option<DecodeMode>,

    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub dev_ratio: Option<f64>,
    pub dropout: Option<f64>,

    pub corpus: Option<PathBuf>,
    pub dev_corpus: Option<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    pub general_emb: Option<PathBuf>,
    pub domain_emb: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Everything a command needs after merging flags, file and defaults.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Resolved {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub corpus: Option<PathBuf>,
    pub dev_corpus: Option<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    pub general_emb: Option<PathBuf>,
    pub domain_emb: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Error in the configuration itself, as opposed to the data it names.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// The file to read: the flag (searched in the config directory when
/// relative and absent), else `dregcn.toml` in the config directory.
pub fn locate(flag: Option<&Path>, config_dir: Option<&Path>) -> anyhow::Result<Option<PathBuf>> {
    match flag {
        Some(p) if p.exists() => Ok(Some(p.to_path_buf())),
        Some(p) => {
            if let (true, Some(dir)) = (p.is_relative(), config_dir) {
                let candidate = dir.join(p);
                if candidate.exists() {
                    return Ok(Some(candidate));
                }
            }
            Err(config_error(format!("config file {} not found", p.display())))
        }
        None => Ok(config_dir
            .map(|d| d.join(DEFAULT_CONFIG_NAME))
            .filter(|p| p.exists())),
    }
}

pub fn parse_file(text: &str) -> anyhow::Result<FileConfig> {
    toml::from_str(text).map_err(|e| config_error(format!("invalid config: {}", e.message())))
}

pub fn load_file(path: &Path) -> anyhow::Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut file = parse_file(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    // paths inside a config file are relative to the file
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [
        &mut file.corpus,
        &mut file.dev_corpus,
        &mut file.test_corpus,
        &mut file.general_emb,
        &mut file.domain_emb,
        &mut file.checkpoint,
        &mut file.out,
    ]
    .into_iter()
    .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(file)
}

pub fn resolve(file: FileConfig, args: &CommonArgs) -> anyhow::Result<Resolved> {
    let enc_default = EncoderConfig::default();
    let mp_default = MessagePassingConfig::default();
    let model_default = ModelConfig::default();
    let train_default = TrainConfig::default();

    let model = ModelConfig {
        encoder: EncoderConfig {
            mode: args.mode.or(file.mode).unwrap_or(enc_default.mode),
            gcn_layers: file.gcn_layers.unwrap_or(enc_default.gcn_layers),
            cnn_layers: file.cnn_layers.unwrap_or(enc_default.cnn_layers),
            kernel_widths: file.kernel_widths.unwrap_or(enc_default.kernel_widths),
            hidden: file.hidden.unwrap_or(enc_default.hidden),
            relation_dim: file.relation_dim.unwrap_or(enc_default.relation_dim),
            normalize_adjacency: file.normalize_adjacency.unwrap_or(enc_default.normalize_adjacency),
        },
        message: MessagePassingConfig {
            variant: args.mp_variant.or(file.mp_variant).unwrap_or(mp_default.variant),
            rounds: args.rounds.or(file.rounds).unwrap_or(mp_default.rounds),
            opinion_passing: file.opinion_passing.unwrap_or(mp_default.opinion_passing),
            pass_pre_attention_as: file.pass_pre_attention_as.unwrap_or(mp_default.pass_pre_attention_as),
        },
        general_dim: file.general_dim.unwrap_or(model_default.general_dim),
        domain_dim: file.domain_dim.unwrap_or(model_default.domain_dim),
        task_hidden: file.task_hidden.or(model_default.task_hidden),
        head_depth: file.head_depth.unwrap_or(model_default.head_depth),
        freeze_embeddings: file.freeze_embeddings.unwrap_or(model_default.freeze_embeddings),
        distinct_reverse_types: file.distinct_reverse_types.unwrap_or(model_default.distinct_reverse_types),
        unknown_relations: file.unknown_relations.unwrap_or(model_default.unknown_relations),
        decode_mode: file.decode.unwrap_or(model_default.decode_mode),
    };
    let train = TrainConfig {
        lr: file.lr.unwrap_or(train_default.lr),
        batch_size: file.batch_size.unwrap_or(train_default.batch_size),
        epochs: file.epochs.unwrap_or(train_default.epochs),
        seed: args.seed.or(file.seed).unwrap_or(train_default.seed),
        runs: args.runs.or(file.runs).unwrap_or(train_default.runs),
        dev_ratio: file.dev_ratio.unwrap_or(train_default.dev_ratio),
        dropout: file.dropout.unwrap_or(train_default.dropout),
    };
    model.validate().map_err(|e| config_error(e.to_string()))?;
    train.validate().map_err(|e| config_error(e.to_string()))?;
    if model.encoder.kernel_widths.iter().any(|w| w % 2 == 0) {
        bail!(config_error("kernel_widths must all be odd"));
    }
    let pick = |flag: &Option<PathBuf>, file: Option<PathBuf>| flag.clone().or(file);
    Ok(Resolved {
        model,
        train,
        corpus: pick(&args.corpus, file.corpus),
        dev_corpus: pick(&args.dev_corpus, file.dev_corpus),
        test_corpus: pick(&args.test_corpus, file.test_corpus),
        general_emb: pick(&args.general_emb, file.general_emb),
        domain_emb: pick(&args.domain_emb, file.domain_emb),
        checkpoint: pick(&args.checkpoint, file.checkpoint),
        out: pick(&args.out, file.out),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let err = parse_file("hidden = 8\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let file = parse_file("seed = 3\nruns = 2\nmode = \"dregcn\"\nepochs = 4\n").unwrap();
        let args = CommonArgs {
            seed: Some(9),
            ..Default::default()
        };
        let r = resolve(file, &args).unwrap();
        assert_eq!(r.train.seed, 9);
        assert_eq!(r.train.runs, 2);
        assert_eq!(r.train.epochs, 4);
        assert_eq!(r.train.lr, 0.0005);
        assert_eq!(r.model.encoder.mode, EncoderMode::Dregcn);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let err = resolve(parse_file("batch_size = 0").unwrap(), &CommonArgs::default()).unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
        let err = resolve(parse_file("kernel_widths = [3, 4]").unwrap(), &CommonArgs::default()).unwrap_err();
        assert!(err.to_string().contains("odd"));
    }
}
