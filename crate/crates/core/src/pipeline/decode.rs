use rayon::prelude::*;

use crate::data::{Padded, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::model::{Encoded, Model, Phase};
use crate::prototypes::PrototypeTable;
use crate::tensor::{Graph, Tensor};

/// Sentences decoded together per forward pass.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub beam: usize,
    /// Length-penalty exponent.
    pub alpha: f64,
    /// Maximum number of generated tokens, EOS included.
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { beam: 5, alpha: 0.6, max_len: 40 }
    }
}

impl DecodeConfig {
    pub fn validate(&self, model_max_len: usize) -> Result<()> {
        if self.beam < 1 {
            return Err(Error::config("beam width must be >= 1"));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::config("length penalty must be >= 0"));
        }
        if self.max_len < 1 || self.max_len > model_max_len {
            return Err(Error::config(format!("decode max_len must be in 1..={model_max_len}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, ending with EOS.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub score: f64,
}

/// `log_prob / len^alpha`.
pub fn length_penalized(log_prob: f64, len: usize, alpha: f64) -> f64 {
    log_prob / (len as f64).powf(alpha)
}

/// Highest-scoring hypothesis; the earliest wins ties.
pub fn best_hypothesis(finished: &[Hypothesis]) -> Option<&Hypothesis> {
    finished.iter().fold(None, |best: Option<&Hypothesis>, h| match best {
        Some(b) if b.score >= h.score => Some(b),
        _ => Some(h),
    })
}

fn log_softmax(row: &[f32]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
    let lse = row.iter().map(|&x| (x as f64 - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|&x| x as f64 - lse).collect()
}

/// Tokens a decoder may emit.
fn emittable(token: usize) -> bool {
    token != PAD as usize && token != BOS as usize
}

/// Encoder states for one chunk, kept as a plain tensor so each decoding
/// step can run on a fresh graph.
struct ChunkEncoding {
    h: Tensor<f32>,
    lens: Vec<usize>,
    width: usize,
}

fn encode_chunk(model: &Model<f32>, table: Option<&PrototypeTable>, srcs: &[Vec<u32>]) -> Result<ChunkEncoding> {
    let src = Padded::new(srcs);
    let mut g = Graph::new();
    let vars = model.bind(&mut g, false);
    let enc = model.encode(&mut g, &vars, &src, table, &mut Phase::Eval)?;
    Ok(ChunkEncoding { h: g.value(enc.h).clone(), lens: src.lens, width: src.width })
}

/// Next-token log-probabilities for each `(sentence, prefix)`; all prefixes share a length.
fn next_log_probs(model: &Model<f32>, enc: &ChunkEncoding, hyps: &[(usize, &[u32])]) -> Result<Vec<Vec<f64>>> {
    let d = model.config.d_model;
    let w = enc.width;
    let mut rows = Vec::with_capacity(hyps.len() * w * d);
    for &(s, _) in hyps {
        rows.extend_from_slice(&enc.h.data()[s * w * d..(s + 1) * w * d]);
    }
    let mut g = Graph::new();
    let vars = model.bind(&mut g, false);
    let h = g.constant(Tensor::new(vec![hyps.len() * w, d], rows)?);
    let encoded = Encoded {
        h,
        src_lens: hyps.iter().map(|&(s, _)| enc.lens[s]).collect(),
        src_width: w,
        prototypes: None,
        layers: Vec::new(),
    };
    let prefixes: Vec<&[u32]> = hyps.iter().map(|&(_, p)| p).collect();
    let tgt = Padded::new(&prefixes);
    let logits = model.decode(&mut g, &vars, &tgt, &encoded, &mut Phase::Eval)?;
    let v = model.config.tgt_vocab;
    let t = tgt.width;
    let data = g.value(logits).data();
    Ok((0..hyps.len()).map(|i| log_softmax(&data[((i + 1) * t - 1) * v..(i + 1) * t * v])).collect())
}

struct BeamState {
    alive: Vec<(Vec<u32>, f64)>,
    finished: Vec<Hypothesis>,
}

fn beam_chunk(
    model: &Model<f32>,
    table: Option<&PrototypeTable>,
    srcs: &[Vec<u32>],
    cfg: &DecodeConfig,
) -> Result<Vec<Vec<u32>>> {
    let enc = encode_chunk(model, table, srcs)?;
    let mut states: Vec<BeamState> =
        srcs.iter().map(|_| BeamState { alive: vec![(vec![BOS], 0.0)], finished: Vec::new() }).collect();
    for step in 1..=cfg.max_len {
        let hyps: Vec<(usize, &[u32])> = states
            .iter()
            .enumerate()
            .flat_map(|(s, st)| st.alive.iter().map(move |(p, _)| (s, p.as_slice())))
            .collect();
        if hyps.is_empty() {
            break;
        }
        let logp = next_log_probs(model, &enc, &hyps)?;
        let mut offset = 0;
        for st in states.iter_mut() {
            let n = st.alive.len();
            let mut cands: Vec<(f64, usize, usize)> = Vec::new();
            for (b, lp) in logp[offset..offset + n].iter().enumerate() {
                let base = st.alive[b].1;
                if step == cfg.max_len {
                    cands.push((base + lp[EOS as usize], b, EOS as usize));
                } else {
                    cands.extend(lp.iter().enumerate().filter(|&(t, _)| emittable(t)).map(|(t, &l)| (base + l, b, t)));
                }
            }
            offset += n;
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::new();
            for &(score, b, t) in cands.iter().take(cfg.beam - st.finished.len()) {
                let mut tokens = st.alive[b].0.clone();
                tokens.push(t as u32);
                if t == EOS as usize {
                    let out = tokens[1..].to_vec();
                    let len = out.len();
                    st.finished.push(Hypothesis {
                        tokens: out,
                        log_prob: score,
                        score: length_penalized(score, len, cfg.alpha),
                    });
                } else {
                    next.push((tokens, score));
                }
            }
            st.alive = if st.finished.len() >= cfg.beam { Vec::new() } else { next };
        }
    }
    Ok(states
        .iter()
        .map(|st| best_hypothesis(&st.finished).expect("forced EOS finishes every beam").tokens.clone())
        .collect())
}

/// Beam search with length-normalized scores. Each output ends with EOS.
pub fn beam_search(
    model: &Model<f32>,
    table: Option<&PrototypeTable>,
    srcs: &[Vec<u32>],
    cfg: &DecodeConfig,
) -> Result<Vec<Vec<u32>>> {
    cfg.validate(model.config.max_len)?;
    let parts: Vec<Vec<Vec<u32>>> =
        srcs.par_chunks(CHUNK).map(|chunk| beam_chunk(model, table, chunk, cfg)).collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Argmax decoding. Each output ends with EOS.
pub fn greedy(
    model: &Model<f32>,
    table: Option<&PrototypeTable>,
    srcs: &[Vec<u32>],
    max_len: usize,
) -> Result<Vec<Vec<u32>>> {
    DecodeConfig { beam: 1, alpha: 0.0, max_len }.validate(model.config.max_len)?;
    let parts: Vec<Vec<Vec<u32>>> = srcs
        .par_chunks(CHUNK)
        .map(|chunk| {
            let enc = encode_chunk(model, table, chunk)?;
            let mut seqs: Vec<Vec<u32>> = chunk.iter().map(|_| vec![BOS]).collect();
            let mut done = vec![false; chunk.len()];
            for step in 1..=max_len {
                let active: Vec<usize> = (0..chunk.len()).filter(|&i| !done[i]).collect();
                if active.is_empty() {
                    break;
                }
                let hyps: Vec<(usize, &[u32])> = active.iter().map(|&i| (i, seqs[i].as_slice())).collect();
                let logp = next_log_probs(model, &enc, &hyps)?;
                for (&i, lp) in active.iter().zip(&logp) {
                    let t = if step == max_len {
                        EOS as usize
                    } else {
                        let mut best = (f64::NEG_INFINITY, 0);
                        for (t, &l) in lp.iter().enumerate().filter(|&(t, _)| emittable(t)) {
                            if l > best.0 {
                                best = (l, t);
                            }
                        }
                        best.1
                    };
                    seqs[i].push(t as u32);
                    done[i] = t == EOS as usize;
                }
            }
            Ok(seqs.into_iter().map(|s| s[1..].to_vec()).collect::<Vec<_>>())
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_penalty_prefers_longer_when_normalized() {
        let a = Hypothesis { tokens: vec![5, EOS], log_prob: -2.0, score: length_penalized(-2.0, 2, 1.0) };
        let b = Hypothesis { tokens: vec![5, 6, EOS], log_prob: -2.7, score: length_penalized(-2.7, 3, 1.0) };
        assert!((a.score + 1.0).abs() < 1e-12 && (b.score + 0.9).abs() < 1e-12);
        assert_eq!(best_hypothesis(&[a, b.clone()]), Some(&b));
    }

    #[test]
    fn config_validation() {
        assert!(DecodeConfig { beam: 0, ..Default::default() }.validate(64).is_err());
        assert!(DecodeConfig { alpha: -0.1, ..Default::default() }.validate(64).is_err());
        assert!(DecodeConfig { max_len: 65, ..Default::default() }.validate(64).is_err());
        assert!(DecodeConfig::default().validate(64).is_ok());
    }
}
