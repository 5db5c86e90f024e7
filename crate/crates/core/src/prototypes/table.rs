use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::checksum::Hasher;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::tensor::Float;

pub const MAGIC: &[u8; 8] = b"PTPROTO1";

/// Per-token `k x d` prototype matrices (row-major), plus lineage metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeTable<T = f32> {
    pub k: usize,
    pub d: usize,
    entries: BTreeMap<u32, Vec<T>>,
    pub vocab_checksum: String,
    pub model_checksum: String,
    pub corpus_checksum: String,
}

impl<T: Float> PrototypeTable<T> {
    pub fn new(k: usize, d: usize) -> Self {
        Self {
            k,
            d,
            entries: BTreeMap::new(),
            vocab_checksum: String::new(),
            model_checksum: String::new(),
            corpus_checksum: String::new(),
        }
    }

    /// Insert `k * d` values for `token`.
    pub fn insert(&mut self, token: u32, rows: Vec<T>) -> Result<()> {
        if rows.len() != self.k * self.d {
            return Err(Error::config(format!(
                "prototype block for token {token} has {} values, expected {}",
                rows.len(),
                self.k * self.d
            )));
        }
        if rows.iter().any(|x| !x.is_finite()) {
            return Err(Error::config(format!("non-finite prototype for token {token}")));
        }
        self.entries.insert(token, rows);
        Ok(())
    }

    pub fn get(&self, token: u32) -> Option<&[T]> {
        self.entries.get(&token).map(Vec::as_slice)
    }

    pub fn contains(&self, token: u32) -> bool {
        self.entries.contains_key(&token)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[T])> {
        self.entries.iter().map(|(&t, v)| (t, v.as_slice()))
    }

    pub fn cast<U: Float>(&self) -> PrototypeTable<U> {
        PrototypeTable {
            k: self.k,
            d: self.d,
            entries: self
                .entries
                .iter()
                .map(|(&t, v)| (t, v.iter().map(|x| U::of(x.to_f64().unwrap())).collect()))
                .collect(),
            vocab_checksum: self.vocab_checksum.clone(),
            model_checksum: self.model_checksum.clone(),
            corpus_checksum: self.corpus_checksum.clone(),
        }
    }

    /// Digest of the prototype values.
    pub fn checksum(&self) -> String {
        let mut h = Hasher::new();
        h.update(&(self.k as u64).to_le_bytes());
        h.update(&(self.d as u64).to_le_bytes());
        for (t, v) in &self.entries {
            h.update(&t.to_le_bytes());
            for x in v {
                h.update(&x.to_f64().unwrap().to_le_bytes());
            }
        }
        h.finish()
    }
}

impl PrototypeTable<f32> {
    /// `PTPROTO1`, a length-prefixed `key=value` header, then per token a
    /// little-endian `u32` id and `k*d` little-endian `f32` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = format!(
            "k={}\nd={}\nvocab_checksum={}\nmodel_checksum={}\ncorpus_checksum={}\ncount={}\n",
            self.k,
            self.d,
            self.vocab_checksum,
            self.model_checksum,
            self.corpus_checksum,
            self.entries.len()
        );
        let mut out = Vec::with_capacity(16 + header.len() + self.entries.len() * (4 + 4 * self.k * self.d));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (t, v) in &self.entries {
            out.extend_from_slice(&t.to_le_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corrupt { path: path.to_path_buf(), reason: reason.into() };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok_or_else(|| corrupt("truncated magic"))? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let hlen = r.u32().ok_or_else(|| corrupt("truncated header length"))? as usize;
        let header = r.take(hlen).ok_or_else(|| corrupt("truncated header"))?;
        let header = std::str::from_utf8(header).map_err(|_| corrupt("header is not UTF-8"))?;
        let kv: BTreeMap<&str, &str> = header.lines().filter_map(|l| l.split_once('=')).collect();
        let num = |key: &str| -> Result<usize> {
            kv.get(key).and_then(|v| v.parse().ok()).ok_or_else(|| corrupt(&format!("missing or bad `{key}`")))
        };
        let (k, d, count) = (num("k")?, num("d")?, num("count")?);
        if k == 0 || d == 0 {
            return Err(corrupt("k and d must be positive"));
        }
        let mut table = Self::new(k, d);
        for key in ["vocab_checksum", "model_checksum", "corpus_checksum"] {
            let v = kv.get(key).ok_or_else(|| corrupt(&format!("missing `{key}`")))?.to_string();
            match key {
                "vocab_checksum" => table.vocab_checksum = v,
                "model_checksum" => table.model_checksum = v,
                _ => table.corpus_checksum = v,
            }
        }
        for _ in 0..count {
            let t = r.u32().ok_or_else(|| corrupt("truncated token id"))?;
            let raw = r.take(4 * k * d).ok_or_else(|| corrupt("truncated prototype block"))?;
            let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            table.insert(t, v).map_err(|_| corrupt("non-finite prototype"))?;
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        if table.len() != count {
            return Err(corrupt("duplicate token ids"));
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    /// Load and check the table against the expected vocabulary and width.
    pub fn load(path: &Path, vocab_checksum: &str, d: usize) -> Result<Self> {
        let table = Self::from_bytes(&fs::read(path)?, path)?;
        if table.vocab_checksum != vocab_checksum {
            return Err(Error::incompatible(format!(
                "prototype table was built for vocabulary {} but the data has {vocab_checksum}",
                table.vocab_checksum
            )));
        }
        if table.d != d {
            return Err(Error::incompatible(format!("prototype width {} does not match model width {d}", table.d)));
        }
        Ok(table)
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    pub fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }
}
