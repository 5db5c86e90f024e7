use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, PrototypeMode};
use crate::checksum::Hasher;
use crate::data::PAD;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Which share of the model a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    /// The baseline Transformer.
    Base,
    /// Projections of the prototype-attention sublayers.
    PrototypeAttention,
    /// Trainable prototype vectors (random-prototype variant only).
    PrototypeTable,
}

/// Partition selector for [`ModelParams::count`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountScope {
    Base,
    PrototypeAttention,
    All,
}

impl CountScope {
    fn includes(self, p: Partition) -> bool {
        match self {
            CountScope::Base => p == Partition::Base,
            CountScope::PrototypeAttention => p == Partition::PrototypeAttention,
            CountScope::All => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Glorot uniform over `(fan_in, fan_out)`.
    Xavier,
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn,
    /// Normal with the given standard deviation; the PAD row is zeroed.
    Embedding(f64),
    Normal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub partition: Partition,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Rank-1 tensors are biases or layer-norm gains.
    pub fn is_bias_like(&self) -> bool {
        self.shape.len() == 1
    }
}

fn attention_specs(out: &mut Vec<ParamSpec>, prefix: &str, d: usize, partition: Partition) {
    let proto = partition == Partition::PrototypeAttention;
    for (w, b) in [("wq", "bq"), ("wk", "bk"), ("wv", "bv"), ("wo", "bo")] {
        let init = match (proto, w) {
            (true, "wo") => Init::Zeros,
            (true, _) => Init::FanIn,
            _ => Init::Xavier,
        };
        out.push(ParamSpec { name: format!("{prefix}.{w}"), shape: vec![d, d], partition, init });
        out.push(ParamSpec { name: format!("{prefix}.{b}"), shape: vec![d], partition, init: Init::Zeros });
    }
}

fn ln_specs(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    let p = Partition::Base;
    out.push(ParamSpec { name: format!("{prefix}.gain"), shape: vec![d], partition: p, init: Init::Ones });
    out.push(ParamSpec { name: format!("{prefix}.bias"), shape: vec![d], partition: p, init: Init::Zeros });
}

fn ffn_specs(out: &mut Vec<ParamSpec>, prefix: &str, d: usize, d_ff: usize) {
    let p = Partition::Base;
    out.push(ParamSpec { name: format!("{prefix}.w1"), shape: vec![d, d_ff], partition: p, init: Init::Xavier });
    out.push(ParamSpec { name: format!("{prefix}.b1"), shape: vec![d_ff], partition: p, init: Init::Zeros });
    out.push(ParamSpec { name: format!("{prefix}.w2"), shape: vec![d_ff, d], partition: p, init: Init::Xavier });
    out.push(ParamSpec { name: format!("{prefix}.b2"), shape: vec![d], partition: p, init: Init::Zeros });
}

/// Every parameter of a model with `config`, in canonical order.
///
/// Weight matrices are stored `[d_in, d_out]` so projections are `x W + b`.
pub fn param_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let d = config.d_model;
    let emb = Init::Embedding((d as f64).powf(-0.5));
    let mut out = vec![
        ParamSpec { name: "src_embed".into(), shape: vec![config.src_vocab, d], partition: Partition::Base, init: emb },
        ParamSpec { name: "tgt_embed".into(), shape: vec![config.tgt_vocab, d], partition: Partition::Base, init: emb },
    ];
    for l in 0..config.n_encoder_layers {
        attention_specs(&mut out, &format!("enc.{l}.self"), d, Partition::Base);
        ln_specs(&mut out, &format!("enc.{l}.ln_self"), d);
        if config.prototype_mode != PrototypeMode::Off {
            attention_specs(&mut out, &format!("enc.{l}.proto"), d, Partition::PrototypeAttention);
        }
        ffn_specs(&mut out, &format!("enc.{l}.ffn"), d, config.d_ff);
        ln_specs(&mut out, &format!("enc.{l}.ln_ffn"), d);
    }
    for l in 0..config.n_decoder_layers {
        attention_specs(&mut out, &format!("dec.{l}.self"), d, Partition::Base);
        ln_specs(&mut out, &format!("dec.{l}.ln_self"), d);
        attention_specs(&mut out, &format!("dec.{l}.cross"), d, Partition::Base);
        ln_specs(&mut out, &format!("dec.{l}.ln_cross"), d);
        ffn_specs(&mut out, &format!("dec.{l}.ffn"), d, config.d_ff);
        ln_specs(&mut out, &format!("dec.{l}.ln_ffn"), d);
    }
    if config.prototype_mode == PrototypeMode::RandomTrainable {
        out.push(ParamSpec {
            name: "proto_table".into(),
            shape: vec![config.src_vocab * config.num_prototypes, d],
            partition: Partition::PrototypeTable,
            init: Init::Normal(1.0),
        });
    }
    out
}

/// Count scalars in `specs` within `scope`, optionally skipping rank-1 tensors.
pub fn count_specs(specs: &[ParamSpec], scope: CountScope, include_bias: bool) -> usize {
    specs
        .iter()
        .filter(|s| scope.includes(s.partition) && (include_bias || !s.is_bias_like()))
        .map(ParamSpec::numel)
        .sum()
}

pub(crate) fn init_tensor<T: Float>(spec: &ParamSpec, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n = spec.numel();
    let (fan_in, fan_out) = match spec.shape[..] {
        [a, b] => (a, b),
        [a] => (a, a),
        _ => (n, n),
    };
    let data: Vec<T> = match spec.init {
        Init::Zeros => vec![T::zero(); n],
        Init::Ones => vec![T::one(); n],
        Init::Xavier => {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| T::of(rng.gen_range(-a..a))).collect()
        }
        Init::FanIn => {
            let a = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| T::of(rng.gen_range(-a..a))).collect()
        }
        Init::Embedding(std) | Init::Normal(std) => {
            let dist = Normal::new(0.0, std).unwrap();
            let mut v: Vec<T> = (0..n).map(|_| T::of(dist.sample(rng))).collect();
            if matches!(spec.init, Init::Embedding(_)) {
                v[PAD as usize * fan_out..(PAD as usize + 1) * fan_out].fill(T::zero());
            }
            v
        }
    };
    Tensor::new(spec.shape.clone(), data).unwrap()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub partition: Partition,
    pub trainable: bool,
}

/// Named parameter collection in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    params: IndexMap<String, Param<T>>,
}

impl<T: Float> Default for ModelParams<T> {
    fn default() -> Self {
        Self { params: IndexMap::new() }
    }
}

impl<T: Float> ModelParams<T> {
    pub fn init(specs: &[ParamSpec], rng: &mut ChaCha8Rng) -> Self {
        let mut out = Self::default();
        for s in specs {
            out.insert(&s.name, init_tensor(s, rng), s.partition, true);
        }
        out
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, partition: Partition, trainable: bool) {
        self.params.insert(name.to_string(), Param { value, partition, trainable });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.get_index_of(name)
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn by_index(&self, i: usize) -> (&str, &Param<T>) {
        let (k, v) = self.params.get_index(i).expect("parameter index");
        (k.as_str(), v)
    }

    pub fn by_index_mut(&mut self, i: usize) -> &mut Param<T> {
        self.params.get_index_mut(i).expect("parameter index").1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Exact number of scalars in `scope`.
    pub fn count(&self, scope: CountScope) -> usize {
        self.params.values().filter(|p| scope.includes(p.partition)).map(|p| p.value.numel()).sum()
    }

    pub fn cast<U: Float>(&self) -> ModelParams<U> {
        ModelParams {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (k.clone(), Param { value: p.value.cast(), partition: p.partition, trainable: p.trainable })
                })
                .collect(),
        }
    }

    /// Digest of names, shapes, and values of the parameters in `scope`.
    pub fn checksum(&self, scope: CountScope) -> String {
        let mut h = Hasher::new();
        for (name, p) in self.params.iter().filter(|(_, p)| scope.includes(p.partition)) {
            h.update(name.as_bytes());
            for &d in p.value.shape() {
                h.update(&(d as u64).to_le_bytes());
            }
            for x in p.value.data() {
                h.update(&x.to_f64().unwrap().to_le_bytes());
            }
        }
        h.finish()
    }

    /// Check that names and shapes match `specs` exactly, in order.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<()> {
        if self.params.len() != specs.len() {
            return Err(Error::incompatible(format!(
                "parameter count {} does not match configuration ({})",
                self.params.len(),
                specs.len()
            )));
        }
        for ((name, p), s) in self.params.iter().zip(specs) {
            if name != &s.name || p.value.shape() != &s.shape[..] {
                return Err(Error::incompatible(format!(
                    "parameter `{name}` {:?} does not match expected `{}` {:?}",
                    p.value.shape(),
                    s.name,
                    s.shape
                )));
            }
        }
        Ok(())
    }
}
