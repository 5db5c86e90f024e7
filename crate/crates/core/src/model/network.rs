use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{init_tensor, param_specs, ModelParams, ParamSpec, Partition};
use super::{ModelConfig, PrototypeMode};
use crate::data::{Batch, Padded};
use crate::error::{Error, Result};
use crate::prototypes::PrototypeTable;
use crate::tensor::{AttentionMask, Float, Graph, Tensor, Var};

/// Forward-pass mode. Training draws dropout masks from the given RNG.
pub enum Phase<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Phase<'_> {
    /// Inverted-dropout keep mask of length `n`, or `None` when inactive.
    fn keep_mask<T: Float>(&mut self, n: usize, p: f64) -> Option<Vec<T>> {
        match self {
            Phase::Train(rng) if p > 0.0 => {
                let scale = T::of(1.0 / (1.0 - p));
                let threshold = (p * 4294967296.0).min(u32::MAX as f64) as u32;
                Some((0..n).map(|_| if rng.gen::<u32>() < threshold { T::zero() } else { scale }).collect())
            }
            _ => None,
        }
    }

    fn dropout<T: Float>(&mut self, g: &mut Graph<T>, x: Var, p: f64) -> Result<Var> {
        match self.keep_mask(g.value(x).numel(), p) {
            Some(keep) => Ok(g.dropout(x, keep)?),
            None => Ok(x),
        }
    }
}

fn locate<T: Float>(params: &ModelParams<T>, name: &str) -> Result<usize> {
    params.index_of(name).ok_or_else(|| Error::incompatible(format!("missing parameter `{name}`")))
}

/// Indices of one attention block's projections in a [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

impl AttentionParams {
    pub fn locate<T: Float>(params: &ModelParams<T>, prefix: &str) -> Result<Self> {
        let f = |s: &str| locate(params, &format!("{prefix}.{s}"));
        Ok(Self {
            wq: f("wq")?,
            bq: f("bq")?,
            wk: f("wk")?,
            bk: f("bk")?,
            wv: f("wv")?,
            bv: f("bv")?,
            wo: f("wo")?,
            bo: f("bo")?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNormParams {
    pub gain: usize,
    pub bias: usize,
}

impl LayerNormParams {
    fn locate<T: Float>(params: &ModelParams<T>, prefix: &str) -> Result<Self> {
        Ok(Self { gain: locate(params, &format!("{prefix}.gain"))?, bias: locate(params, &format!("{prefix}.bias"))? })
    }

    fn apply<T: Float>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        Ok(g.layer_norm(x, vars[self.gain], vars[self.bias])?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedForwardParams {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

impl FeedForwardParams {
    fn locate<T: Float>(params: &ModelParams<T>, prefix: &str) -> Result<Self> {
        let f = |s: &str| locate(params, &format!("{prefix}.{s}"));
        Ok(Self { w1: f("w1")?, b1: f("b1")?, w2: f("w2")?, b2: f("b2")? })
    }

    /// `ReLU(x W1 + b1) W2 + b2`.
    fn apply<T: Float>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        let h = g.linear(x, vars[self.w1], vars[self.b1])?;
        let h = g.relu(h);
        Ok(g.linear(h, vars[self.w2], vars[self.b2])?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderLayerParams {
    pub self_attn: AttentionParams,
    pub ln_self: LayerNormParams,
    /// Present iff prototype attention is enabled.
    pub proto_attn: Option<AttentionParams>,
    pub ffn: FeedForwardParams,
    pub ln_ffn: LayerNormParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderLayerParams {
    pub self_attn: AttentionParams,
    pub ln_self: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub ln_cross: LayerNormParams,
    pub ffn: FeedForwardParams,
    pub ln_ffn: LayerNormParams,
}

/// Single-head `softmax(Q K^T / sqrt(d_k)) V` over the allowed keys of `mask`.
pub fn scaled_dot_attention<T: Float>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    mask: Rc<AttentionMask>,
) -> Result<Var> {
    Ok(g.attention(q, k, v, 1, mask, None)?)
}

/// Project queries, keys and values, attend per head, concatenate, and apply
/// the output projection. Output rows align with `query`.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention<T: Float>(
    g: &mut Graph<T>,
    vars: &[Var],
    query: Var,
    key: Var,
    value: Var,
    mask: Rc<AttentionMask>,
    p: &AttentionParams,
    heads: usize,
    phase: &mut Phase<'_>,
    dropout: f64,
) -> Result<Var> {
    let q = g.linear(query, vars[p.wq], vars[p.bq])?;
    let k = g.linear(key, vars[p.wk], vars[p.bk])?;
    let v = if value == key && p.wv == p.wk && p.bv == p.bk { k } else { g.linear(value, vars[p.wv], vars[p.bv])? };
    let keep = phase.keep_mask(heads * mask.nnz(), dropout);
    let a = g.attention(q, k, v, heads, mask, keep)?;
    Ok(g.linear(a, vars[p.wo], vars[p.bo])?)
}

/// Prototype keys/values for a batch and the locality mask tying each source
/// position to its own token's `k` prototype rows.
#[derive(Debug, Clone)]
pub struct PrototypeInput {
    pub values: Var,
    pub mask: Rc<AttentionMask>,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderLayerOutput {
    pub out: Var,
    /// Self-attention sublayer output after residual and norm.
    pub self_attended: Var,
    /// Raw prototype-attention output, before the residual add.
    pub prototype: Option<Var>,
}

fn residual_norm<T: Float>(
    g: &mut Graph<T>,
    vars: &[Var],
    x: Var,
    sub: Var,
    ln: &LayerNormParams,
    phase: &mut Phase<'_>,
    dropout: f64,
) -> Result<Var> {
    let sub = phase.dropout(g, sub, dropout)?;
    let s = g.add(x, sub)?;
    ln.apply(g, vars, s)
}

/// Self-attention, then prototype attention (when enabled), then the
/// feed-forward network. Self-attention and feed-forward sublayers are
/// residual + post-norm; the prototype sublayer is a residual add whose sum
/// feeds the feed-forward sublayer.
#[allow(clippy::too_many_arguments)]
pub fn encoder_layer_forward<T: Float>(
    g: &mut Graph<T>,
    vars: &[Var],
    h_prev: Var,
    self_mask: Rc<AttentionMask>,
    prototypes: Option<&PrototypeInput>,
    layer: &EncoderLayerParams,
    heads: usize,
    phase: &mut Phase<'_>,
    dropout: f64,
) -> Result<EncoderLayerOutput> {
    let sa = multi_head_attention(g, vars, h_prev, h_prev, h_prev, self_mask, &layer.self_attn, heads, phase, dropout)?;
    let h_a = residual_norm(g, vars, h_prev, sa, &layer.ln_self, phase, dropout)?;
    let (h_p, proto_out) = match (&layer.proto_attn, prototypes) {
        (None, None) => (h_a, None),
        (Some(pa), Some(pi)) => {
            let c = pi.values;
            let p = multi_head_attention(g, vars, h_a, c, c, pi.mask.clone(), pa, heads, phase, dropout)?;
            let pd = phase.dropout(g, p, dropout)?;
            (g.add(h_a, pd)?, Some(p))
        }
        (Some(_), None) => return Err(Error::config("encoder layer expects prototypes but none were given")),
        (None, Some(_)) => return Err(Error::config("prototypes given to a layer without prototype attention")),
    };
    let ff = layer.ffn.apply(g, vars, h_p)?;
    let out = residual_norm(g, vars, h_p, ff, &layer.ln_ffn, phase, dropout)?;
    Ok(EncoderLayerOutput { out, self_attended: h_a, prototype: proto_out })
}

/// Sinusoidal absolute positions for rows of a padded batch.
pub fn positional_encoding<T: Float>(batch: usize, width: usize, d: usize) -> Tensor<T> {
    let mut row = vec![T::zero(); width * d];
    for pos in 0..width {
        for i in (0..d).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(i as f64 / d as f64);
            row[pos * d + i] = T::of(angle.sin());
            if i + 1 < d {
                row[pos * d + i + 1] = T::of(angle.cos());
            }
        }
    }
    Tensor::new(vec![batch * width, d], row.repeat(batch)).unwrap()
}

/// Encoder states for a padded source batch.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub h: Var,
    pub src_lens: Vec<usize>,
    pub src_width: usize,
    pub prototypes: Option<PrototypeInput>,
    /// Per-layer outputs, in order.
    pub layers: Vec<EncoderLayerOutput>,
}

impl Encoded {
    /// Number of prototype key rows the prototype sublayers attend over.
    pub fn prototype_keys(&self) -> usize {
        self.prototypes.as_ref().map_or(0, |p| p.mask.n_keys())
    }
}

/// Transformer encoder-decoder with a shared target embedding / output matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Float = f32> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
    src_embed: usize,
    tgt_embed: usize,
    encoder: Vec<EncoderLayerParams>,
    decoder: Vec<DecoderLayerParams>,
    proto_table: Option<usize>,
    /// Tokens that own trainable prototypes (random-trainable mode).
    proto_tokens: Vec<bool>,
}

impl<T: Float> Model<T> {
    /// Freshly initialized model. In random-trainable mode every token except
    /// the reserved ids owns prototypes; use [`Model::with_prototype_tokens`] to narrow.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        let params = ModelParams::init(&specs, &mut ChaCha8Rng::seed_from_u64(seed));
        let tokens = (0..config.src_vocab).map(|t| t >= 4).collect();
        Self::from_params(config, params, tokens)
    }

    pub fn from_params(config: ModelConfig, mut params: ModelParams<T>, proto_tokens: Vec<bool>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        params.check_against(&specs)?;
        for ((_, p), s) in params.iter_mut().zip(&specs) {
            p.partition = s.partition;
        }
        let mut encoder = Vec::new();
        for l in 0..config.n_encoder_layers {
            encoder.push(EncoderLayerParams {
                self_attn: AttentionParams::locate(&params, &format!("enc.{l}.self"))?,
                ln_self: LayerNormParams::locate(&params, &format!("enc.{l}.ln_self"))?,
                proto_attn: if config.prototype_mode == PrototypeMode::Off {
                    None
                } else {
                    Some(AttentionParams::locate(&params, &format!("enc.{l}.proto"))?)
                },
                ffn: FeedForwardParams::locate(&params, &format!("enc.{l}.ffn"))?,
                ln_ffn: LayerNormParams::locate(&params, &format!("enc.{l}.ln_ffn"))?,
            });
        }
        let mut decoder = Vec::new();
        for l in 0..config.n_decoder_layers {
            decoder.push(DecoderLayerParams {
                self_attn: AttentionParams::locate(&params, &format!("dec.{l}.self"))?,
                ln_self: LayerNormParams::locate(&params, &format!("dec.{l}.ln_self"))?,
                cross_attn: AttentionParams::locate(&params, &format!("dec.{l}.cross"))?,
                ln_cross: LayerNormParams::locate(&params, &format!("dec.{l}.ln_cross"))?,
                ffn: FeedForwardParams::locate(&params, &format!("dec.{l}.ffn"))?,
                ln_ffn: LayerNormParams::locate(&params, &format!("dec.{l}.ln_ffn"))?,
            });
        }
        if proto_tokens.len() != config.src_vocab {
            return Err(Error::incompatible("prototype token mask does not match the source vocabulary"));
        }
        let proto_table = params.index_of("proto_table");
        Ok(Self {
            src_embed: locate(&params, "src_embed")?,
            tgt_embed: locate(&params, "tgt_embed")?,
            config,
            params,
            encoder,
            decoder,
            proto_table,
            proto_tokens,
        })
    }

    pub fn with_prototype_tokens(mut self, tokens: Vec<bool>) -> Result<Self> {
        if tokens.len() != self.config.src_vocab {
            return Err(Error::incompatible("prototype token mask does not match the source vocabulary"));
        }
        self.proto_tokens = tokens;
        Ok(self)
    }

    pub fn prototype_tokens(&self) -> &[bool] {
        &self.proto_tokens
    }

    pub fn encoder_layers(&self) -> &[EncoderLayerParams] {
        &self.encoder
    }

    pub fn decoder_layers(&self) -> &[DecoderLayerParams] {
        &self.decoder
    }

    pub fn cast<U: Float>(&self) -> Model<U> {
        Model::from_params(self.config.clone(), self.params.cast(), self.proto_tokens.clone()).unwrap()
    }

    /// Copy of this baseline model extended with prototype attention.
    ///
    /// Base parameters are copied unchanged. New query/key/value projections
    /// get fan-in uniform init; output projections and all new biases are
    /// zero, so the extended encoder initially computes the same function.
    pub fn attach_prototype_attention(
        &self,
        mode: PrototypeMode,
        num_prototypes: usize,
        proto_tokens: Vec<bool>,
        seed: u64,
    ) -> Result<Self> {
        if self.config.prototype_mode != PrototypeMode::Off {
            return Err(Error::config("model already has prototype attention"));
        }
        if mode == PrototypeMode::Off {
            return Err(Error::config("cannot attach prototype attention in mode `off`"));
        }
        let config = ModelConfig { prototype_mode: mode, num_prototypes, ..self.config.clone() };
        config.validate()?;
        let specs: Vec<ParamSpec> = param_specs(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::default();
        for s in &specs {
            match self.params.get(&s.name) {
                Some(p) if s.partition == Partition::Base => {
                    params.insert(&s.name, p.value.clone(), Partition::Base, p.trainable)
                }
                _ => params.insert(&s.name, init_tensor(s, &mut rng), s.partition, true),
            }
        }
        Self::from_params(config, params, proto_tokens)
    }

    /// Record every parameter on `g`. Trainable parameters track gradients iff `train`.
    pub fn bind(&self, g: &mut Graph<T>, train: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|(_, p)| {
                let mut t = p.value.clone();
                t.requires_grad = train && p.trainable;
                g.leaf(t)
            })
            .collect()
    }

    fn check_ids(&self, ids: &Padded, vocab: usize) -> Result<()> {
        if ids.width > self.config.max_len {
            return Err(Error::TooLong { len: ids.width, max: self.config.max_len });
        }
        if let Some(&bad) = ids.ids.iter().find(|&&i| i as usize >= vocab) {
            return Err(Error::UnknownToken { id: bad as usize, size: vocab });
        }
        Ok(())
    }

    fn embed(&self, g: &mut Graph<T>, table: Var, ids: &Padded, phase: &mut Phase<'_>) -> Result<Var> {
        let d = self.config.d_model;
        let idx: Vec<usize> = ids.ids.iter().map(|&i| i as usize).collect();
        let e = g.gather(table, &idx)?;
        let e = g.scale(e, T::of((d as f64).sqrt()));
        let pe = g.constant(positional_encoding(ids.batch_size(), ids.width, d));
        let h = g.add(e, pe)?;
        phase.dropout(g, h, self.config.dropout)
    }

    /// Build the per-batch prototype matrix `C` and its locality mask.
    pub fn prototype_input(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        src: &Padded,
        table: Option<&PrototypeTable<T>>,
    ) -> Result<Option<PrototypeInput>> {
        let (k, d) = (self.config.num_prototypes, self.config.d_model);
        let mut rows: Vec<Vec<u32>> = Vec::with_capacity(src.rows());
        let mut n_keys = 0u32;
        let values = match self.config.prototype_mode {
            PrototypeMode::Off => return Ok(None),
            PrototypeMode::ClusteredFrozen => {
                let table = table.ok_or_else(|| Error::config("clustered prototype mode needs a prototype table"))?;
                if table.k != k || table.d != d {
                    return Err(Error::incompatible(format!(
                        "prototype table is {}x{} but the model expects {k}x{d}",
                        table.k, table.d
                    )));
                }
                let mut data = Vec::new();
                for (&tok, &pad) in src.ids.iter().zip(&src.pad_mask) {
                    match table.get(tok).filter(|_| !pad) {
                        Some(block) => {
                            data.extend_from_slice(block);
                            rows.push((n_keys..n_keys + k as u32).collect());
                            n_keys += k as u32;
                        }
                        None => rows.push(Vec::new()),
                    }
                }
                g.constant(Tensor::new(vec![n_keys as usize, d], data)?)
            }
            PrototypeMode::RandomTrainable => {
                let table_var = vars[self.proto_table.expect("random-trainable model has a prototype table")];
                let mut ids = Vec::new();
                for (&tok, &pad) in src.ids.iter().zip(&src.pad_mask) {
                    if !pad && self.proto_tokens[tok as usize] {
                        ids.extend((0..k).map(|j| tok as usize * k + j));
                        rows.push((n_keys..n_keys + k as u32).collect());
                        n_keys += k as u32;
                    } else {
                        rows.push(Vec::new());
                    }
                }
                g.gather(table_var, &ids)?
            }
        };
        let mask = Rc::new(AttentionMask::from_rows(n_keys as usize, rows));
        Ok(Some(PrototypeInput { values, mask }))
    }

    pub fn encode(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        src: &Padded,
        table: Option<&PrototypeTable<T>>,
        phase: &mut Phase<'_>,
    ) -> Result<Encoded> {
        self.check_ids(src, self.config.src_vocab)?;
        let mut h = self.embed(g, vars[self.src_embed], src, phase)?;
        let self_mask = Rc::new(AttentionMask::batched(&src.lens, src.width, &src.lens, src.width, false));
        let prototypes = self.prototype_input(g, vars, src, table)?;
        let mut layers = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let out = encoder_layer_forward(
                g,
                vars,
                h,
                self_mask.clone(),
                prototypes.as_ref(),
                layer,
                self.config.n_heads,
                phase,
                self.config.dropout,
            )?;
            h = out.out;
            layers.push(out);
        }
        Ok(Encoded { h, src_lens: src.lens.clone(), src_width: src.width, prototypes, layers })
    }

    /// Next-token logits `[batch * width, tgt_vocab]` for decoder inputs `tgt_in`.
    pub fn decode(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        tgt_in: &Padded,
        enc: &Encoded,
        phase: &mut Phase<'_>,
    ) -> Result<Var> {
        self.check_ids(tgt_in, self.config.tgt_vocab)?;
        if tgt_in.batch_size() != enc.src_lens.len() {
            return Err(Error::config("source and target batch sizes differ"));
        }
        let (heads, p) = (self.config.n_heads, self.config.dropout);
        let mut y = self.embed(g, vars[self.tgt_embed], tgt_in, phase)?;
        let self_mask = Rc::new(AttentionMask::batched(&tgt_in.lens, tgt_in.width, &tgt_in.lens, tgt_in.width, true));
        let cross_mask =
            Rc::new(AttentionMask::batched(&tgt_in.lens, tgt_in.width, &enc.src_lens, enc.src_width, false));
        for layer in &self.decoder {
            let sa = multi_head_attention(g, vars, y, y, y, self_mask.clone(), &layer.self_attn, heads, phase, p)?;
            y = residual_norm(g, vars, y, sa, &layer.ln_self, phase, p)?;
            let ca =
                multi_head_attention(g, vars, y, enc.h, enc.h, cross_mask.clone(), &layer.cross_attn, heads, phase, p)?;
            y = residual_norm(g, vars, y, ca, &layer.ln_cross, phase, p)?;
            let ff = layer.ffn.apply(g, vars, y)?;
            y = residual_norm(g, vars, y, ff, &layer.ln_ffn, phase, p)?;
        }
        Ok(g.matmul_nt(y, vars[self.tgt_embed])?)
    }

    /// Mean label-smoothed cross-entropy of `batch`.
    pub fn batch_loss(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        batch: &Batch,
        table: Option<&PrototypeTable<T>>,
        phase: &mut Phase<'_>,
        smoothing: f64,
    ) -> Result<Var> {
        let enc = self.encode(g, vars, &batch.src, table, phase)?;
        let logits = self.decode(g, vars, &batch.tgt_in, &enc, phase)?;
        Ok(g.cross_entropy(logits, &batch.targets(), T::of(smoothing))?)
    }

    /// Index of the trainable prototype table parameter, if any.
    pub fn prototype_table_param(&self) -> Option<usize> {
        self.proto_table
    }

    pub fn src_embed_param(&self) -> usize {
        self.src_embed
    }
}
