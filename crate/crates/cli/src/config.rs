//! Flat `key=value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use proto_nmt::data::{BenchmarkSizes, GenerationRules};
use proto_nmt::model::ModelConfig;
use proto_nmt::pipeline::{DecodeConfig, TrainMode, TrainingConfig};
use proto_nmt::tensor::AdamConfig;

/// Every accepted key with its default, taken from the library defaults.
/// Empty paths fall back to another key.
fn defaults() -> Vec<(&'static str, String)> {
    let sizes = BenchmarkSizes::default();
    let rules = GenerationRules::default();
    let model = ModelConfig::default();
    let train = TrainingConfig::default();
    let decode = DecodeConfig::default();
    vec![
        ("data_dir", "data".into()),
        ("run_dir", "run".into()),
        ("out_dir", String::new()),
        ("checkpoint", String::new()),
        ("seed", train.seed.to_string()),
        ("threads", "0".into()),
        ("train_size", sizes.train.to_string()),
        ("dev_size", sizes.dev.to_string()),
        ("test_size", sizes.test.to_string()),
        ("cg_compounds", sizes.cg_compounds.to_string()),
        ("contexts_per_compound", sizes.contexts_per_compound.to_string()),
        ("templates_per_pattern", rules.templates_per_pattern.to_string()),
        ("seen_adjectives_per_noun", rules.seen_adjectives_per_noun.to_string()),
        ("primary_pair_rate", rules.primary_pair_rate.to_string()),
        ("mod_rate", rules.mod_rate.to_string()),
        ("vocab_min_freq", "1".into()),
        ("d_model", model.d_model.to_string()),
        ("n_heads", model.n_heads.to_string()),
        ("n_encoder_layers", model.n_encoder_layers.to_string()),
        ("n_decoder_layers", model.n_decoder_layers.to_string()),
        ("d_ff", model.d_ff.to_string()),
        ("max_len", model.max_len.to_string()),
        ("dropout", model.dropout.to_string()),
        ("num_prototypes", model.num_prototypes.to_string()),
        ("mode", train.mode.to_string()),
        ("epochs", train.epochs.to_string()),
        ("warmup_epochs", train.warmup_epochs.to_string()),
        ("batch_size", train.batch_size.to_string()),
        ("lr", train.adam.lr.to_string()),
        ("beta1", train.adam.beta1.to_string()),
        ("beta2", train.adam.beta2.to_string()),
        ("eps", train.adam.eps.to_string()),
        ("warmup_steps", train.warmup_steps.to_string()),
        ("label_smoothing", train.label_smoothing.to_string()),
        ("min_freq", train.min_freq.to_string()),
        ("log_wall_clock", train.log_wall_clock.to_string()),
        ("beam", decode.beam.to_string()),
        ("alpha", decode.alpha.to_string()),
        ("decode_max_len", decode.max_len.to_string()),
        ("split", "cg-test".into()),
        ("eval_splits", "cg-test".into()),
        ("bleu_smoothing", "false".into()),
        ("model_name", String::new()),
        ("k_list", "0,1,2,3,4,5".into()),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { values: defaults().into_iter().map(|(k, v)| (k.to_string(), v)).collect() }
    }
}

fn parse_line(line: &str) -> Result<Option<(&str, &str)>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("expected key=value, got `{line}`"))?;
    Ok(Some((k.trim(), v.trim())))
}

impl RunConfig {
    /// Set `key`; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                value.clone_into(slot);
                Ok(())
            }
            None => bail!("unknown config key `{key}`"),
        }
    }

    /// Apply `key=value` lines; blank lines and `#` comments are skipped.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            if let Some((k, v)) = parse_line(line).with_context(|| format!("config line {}", i + 1))? {
                self.set(k, v).with_context(|| format!("config line {}", i + 1))?;
            }
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        self.merge_text(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Apply a `KEY=VALUE` override.
    pub fn merge_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = parse_line(assignment)?.ok_or_else(|| anyhow!("empty override"))?;
        self.set(k, v)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("`{key}` is not a config key"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| anyhow!("invalid value `{raw}` for `{key}`: {e}"))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| anyhow!("invalid entry `{s}` in `{key}`: {e}")))
            .collect()
    }

    /// Fully resolved configuration, one sorted `key=value` line per key.
    pub fn to_kv(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn data_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("data_dir"))
    }

    pub fn run_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("run_dir"))
    }

    /// `out_dir`, defaulting to the run directory.
    pub fn out_dir(&self) -> PathBuf {
        match self.raw("out_dir") {
            "" => self.run_dir(),
            d => PathBuf::from(d),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn mode(&self) -> Result<TrainMode> {
        self.get::<TrainMode>("mode")
    }

    pub fn sizes(&self) -> Result<BenchmarkSizes> {
        Ok(BenchmarkSizes {
            train: self.get("train_size")?,
            dev: self.get("dev_size")?,
            test: self.get("test_size")?,
            cg_compounds: self.get("cg_compounds")?,
            contexts_per_compound: self.get("contexts_per_compound")?,
        })
    }

    pub fn rules(&self) -> Result<GenerationRules> {
        Ok(GenerationRules {
            templates_per_pattern: self.get("templates_per_pattern")?,
            seen_adjectives_per_noun: self.get("seen_adjectives_per_noun")?,
            primary_pair_rate: self.get("primary_pair_rate")?,
            mod_rate: self.get("mod_rate")?,
            ..GenerationRules::default()
        })
    }

    /// Model shape; vocabulary sizes are filled in from the data.
    pub fn model(&self, src_vocab: usize, tgt_vocab: usize) -> Result<ModelConfig> {
        let config = ModelConfig {
            d_model: self.get("d_model")?,
            n_heads: self.get("n_heads")?,
            n_encoder_layers: self.get("n_encoder_layers")?,
            n_decoder_layers: self.get("n_decoder_layers")?,
            d_ff: self.get("d_ff")?,
            src_vocab,
            tgt_vocab,
            max_len: self.get("max_len")?,
            dropout: self.get("dropout")?,
            num_prototypes: self.get("num_prototypes")?,
            ..ModelConfig::default()
        };
        config.validate()?;
        Ok(config)
    }

    pub fn training(&self, checkpoint_dir: Option<PathBuf>) -> Result<TrainingConfig> {
        let config = TrainingConfig {
            epochs: self.get("epochs")?,
            warmup_epochs: self.get("warmup_epochs")?,
            batch_size: self.get("batch_size")?,
            seed: self.seed()?,
            mode: self.mode()?,
            checkpoint_dir,
            adam: AdamConfig {
                lr: self.get("lr")?,
                beta1: self.get("beta1")?,
                beta2: self.get("beta2")?,
                eps: self.get("eps")?,
            },
            warmup_steps: self.get("warmup_steps")?,
            label_smoothing: self.get("label_smoothing")?,
            min_freq: self.get("min_freq")?,
            log_wall_clock: self.get("log_wall_clock")?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn decode(&self) -> Result<DecodeConfig> {
        Ok(DecodeConfig { beam: self.get("beam")?, alpha: self.get("alpha")?, max_len: self.get("decode_max_len")? })
    }
}
