use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{param_specs, Model, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::prototypes::Reader;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"PTNMT1";

const PROTO_TOKENS_KEY: &str = "proto_tokens";

fn encode_tokens(mask: &[bool]) -> String {
    let ids: Vec<String> = mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i.to_string()).collect();
    ids.join(",")
}

fn decode_tokens(s: &str, n: usize) -> Option<Vec<bool>> {
    let mut mask = vec![false; n];
    for part in s.split(',').filter(|p| !p.is_empty()) {
        *mask.get_mut(part.parse::<usize>().ok()?)? = true;
    }
    Some(mask)
}

/// Serialize `model` plus `meta` entries into the checkpoint format.
pub fn checkpoint_bytes(model: &Model<f32>, meta: &[(String, String)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, p) in model.params.iter() {
        let name_len = u16::try_from(name.len()).map_err(|_| Error::config("parameter name too long"))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut echo = String::new();
    let mut seen = std::collections::BTreeSet::new();
    let model_kv = model.config.to_kv();
    let tokens = [(PROTO_TOKENS_KEY.to_string(), encode_tokens(model.prototype_tokens()))];
    for (k, v) in model_kv.iter().chain(&tokens).chain(meta) {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::config(format!("checkpoint metadata `{k}` is not a single key=value line")));
        }
        if !seen.insert(k.as_str()) {
            return Err(Error::config(format!("duplicate checkpoint metadata key `{k}`")));
        }
        echo.push_str(&format!("{k}={v}\n"));
    }
    out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    out.extend_from_slice(echo.as_bytes());
    Ok(out)
}

/// Write a checkpoint atomically.
pub fn save_checkpoint(path: &Path, model: &Model<f32>, meta: &[(String, String)]) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(model, meta)?)
}

/// Parse checkpoint bytes; returns the model and the full key=value echo.
pub fn parse_checkpoint(bytes: &[u8], path: &Path) -> Result<(Model<f32>, BTreeMap<String, String>)> {
    let corrupt = |reason: &str| Error::Corrupt { path: path.to_path_buf(), reason: reason.into() };
    let mut r = Reader { bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len()).ok_or_else(|| corrupt("truncated magic"))? != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let count = r.u32().ok_or_else(|| corrupt("truncated parameter count"))?;
    let mut raw = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let nlen = r.u16().ok_or_else(|| corrupt("truncated name length"))? as usize;
        let name = r.take(nlen).ok_or_else(|| corrupt("truncated name"))?;
        let name = std::str::from_utf8(name).map_err(|_| corrupt("parameter name is not UTF-8"))?.to_string();
        let rank = r.u8().ok_or_else(|| corrupt("truncated rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32().ok_or_else(|| corrupt("truncated shape"))? as usize);
        }
        let n: usize = shape.iter().product();
        let data = r.take(n.checked_mul(4).ok_or_else(|| corrupt("shape overflow"))?);
        let data = data.ok_or_else(|| corrupt("truncated values"))?;
        let data: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        raw.push((name, Tensor::new(shape, data)?));
    }
    let elen = r.u32().ok_or_else(|| corrupt("truncated config length"))? as usize;
    let echo = r.take(elen).ok_or_else(|| corrupt("truncated config"))?;
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    let echo = std::str::from_utf8(echo).map_err(|_| corrupt("config is not UTF-8"))?;
    let kv: BTreeMap<String, String> = echo
        .lines()
        .map(|l| {
            l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(|| corrupt("bad config line"))
        })
        .collect::<Result<_>>()?;
    let config = ModelConfig::from_kv(&kv)?;
    let specs = param_specs(&config);
    if specs.len() != raw.len() {
        return Err(Error::incompatible("checkpoint parameters do not match its configuration"));
    }
    let mut params = ModelParams::default();
    for ((name, value), spec) in raw.into_iter().zip(&specs) {
        params.insert(&name, value, spec.partition, true);
    }
    let tokens = kv
        .get(PROTO_TOKENS_KEY)
        .and_then(|s| decode_tokens(s, config.src_vocab))
        .ok_or_else(|| corrupt("missing or bad prototype token list"))?;
    Ok((Model::from_params(config, params, tokens)?, kv))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model<f32>, BTreeMap<String, String>)> {
    parse_checkpoint(&fs::read(path)?, path)
}
