//! Transformer encoder-decoder with an optional prototype-attention sublayer
//! in every encoder layer.

mod checkpoint;
mod network;
mod params;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use network::{
    encoder_layer_forward, multi_head_attention, positional_encoding, scaled_dot_attention, AttentionParams,
    DecoderLayerParams, Encoded, EncoderLayerOutput, EncoderLayerParams, FeedForwardParams, LayerNormParams, Model,
    Phase, PrototypeInput,
};
pub use params::{count_specs, param_specs, CountScope, Init, ModelParams, Param, ParamSpec, Partition};

pub use crate::tensor::AttentionMask;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrototypeMode {
    Off,
    /// Prototypes come from a clustered table and are not trained.
    ClusteredFrozen,
    /// Prototypes are randomly initialized parameters trained with the model.
    RandomTrainable,
}

impl fmt::Display for PrototypeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrototypeMode::Off => "off",
            PrototypeMode::ClusteredFrozen => "clustered-frozen",
            PrototypeMode::RandomTrainable => "random-trainable",
        })
    }
}

impl FromStr for PrototypeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Self::Off),
            "clustered-frozen" => Ok(Self::ClusteredFrozen),
            "random-trainable" => Ok(Self::RandomTrainable),
            _ => Err(Error::config(format!("unknown prototype mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub d_ff: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub num_prototypes: usize,
    pub prototype_mode: PrototypeMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            d_ff: 128,
            src_vocab: 0,
            tgt_vocab: 0,
            max_len: 64,
            dropout: 0.1,
            num_prototypes: 3,
            prototype_mode: PrototypeMode::Off,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.prototype_mode != PrototypeMode::Off && self.num_prototypes < 1 {
            return Err(Error::config("num_prototypes must be >= 1 when prototypes are enabled"));
        }
        if self.src_vocab < 4 || self.tgt_vocab < 4 {
            return Err(Error::config("vocabularies must include the reserved tokens"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must be in [0, 1)"));
        }
        if self.d_ff == 0 || self.max_len == 0 {
            return Err(Error::config("d_ff and max_len must be positive"));
        }
        Ok(())
    }

    /// Prototype-attention parameter count: `L * (4 d^2 + 4 d)`, or `L * 4 d^2`
    /// without biases.
    pub fn prototype_attention_params(&self, include_bias: bool) -> usize {
        let d = self.d_model;
        self.n_encoder_layers * (4 * d * d + if include_bias { 4 * d } else { 0 })
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        [
            ("d_model", self.d_model.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("n_encoder_layers", self.n_encoder_layers.to_string()),
            ("n_decoder_layers", self.n_decoder_layers.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("src_vocab", self.src_vocab.to_string()),
            ("tgt_vocab", self.tgt_vocab.to_string()),
            ("max_len", self.max_len.to_string()),
            ("dropout", self.dropout.to_string()),
            ("num_prototypes", self.num_prototypes.to_string()),
            ("prototype_mode", self.prototype_mode.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        fn get<V: FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<V> {
            kv.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::config(format!("missing or invalid model key `{key}`")))
        }
        let c = Self {
            d_model: get(kv, "d_model")?,
            n_heads: get(kv, "n_heads")?,
            n_encoder_layers: get(kv, "n_encoder_layers")?,
            n_decoder_layers: get(kv, "n_decoder_layers")?,
            d_ff: get(kv, "d_ff")?,
            src_vocab: get(kv, "src_vocab")?,
            tgt_vocab: get(kv, "tgt_vocab")?,
            max_len: get(kv, "max_len")?,
            dropout: get(kv, "dropout")?,
            num_prototypes: get(kv, "num_prototypes")?,
            prototype_mode: kv
                .get("prototype_mode")
                .ok_or_else(|| Error::config("missing model key `prototype_mode`"))?
                .parse()?,
        };
        c.validate()?;
        Ok(c)
    }
}
