//! Per-token prototypes: collect contextual encoder states for every token
//! occurrence, cluster each token's states, and persist the centroids.

mod kmeans;
mod table;

pub use kmeans::{kmeans, KMeans, KMeansConfig};
pub use table::{PrototypeTable, MAGIC as PROTOTYPE_MAGIC};

pub(crate) use table::Reader;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::data::{batchify, ParallelCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Model, Phase, PrototypeMode};
use crate::tensor::Graph;

/// Growable per-token lists of `d`-dimensional vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationStore {
    d: usize,
    lists: BTreeMap<u32, Vec<f32>>,
}

impl RepresentationStore {
    pub fn new(d: usize) -> Self {
        Self { d, lists: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn push(&mut self, token: u32, vector: &[f32]) -> Result<()> {
        if vector.len() != self.d {
            return Err(Error::config(format!("representation has length {}, expected {}", vector.len(), self.d)));
        }
        self.lists.entry(token).or_default().extend_from_slice(vector);
        Ok(())
    }

    /// Number of stored vectors for `token`.
    pub fn count(&self, token: u32) -> usize {
        self.lists.get(&token).map_or(0, |v| v.len() / self.d)
    }

    /// Stored vectors for `token`, flattened row-major.
    pub fn vectors(&self, token: u32) -> &[f32] {
        self.lists.get(&token).map_or(&[], Vec::as_slice)
    }

    pub fn tokens(&self) -> impl Iterator<Item = u32> + '_ {
        self.lists.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }
}

/// Tokens that never receive prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct ExclusionPolicy {
    pub punctuation: BTreeSet<u32>,
    pub min_freq: u64,
    frequencies: Vec<u64>,
}

impl ExclusionPolicy {
    pub fn new(vocab: &Vocabulary, min_freq: u64) -> Result<Self> {
        if min_freq < 1 {
            return Err(Error::config("minimum prototype frequency must be >= 1"));
        }
        let n = vocab.len() as u32;
        Ok(Self {
            punctuation: (0..n).filter(|&i| vocab.is_punct(i)).collect(),
            min_freq,
            frequencies: (0..n).map(|i| vocab.frequency(i)).collect(),
        })
    }

    /// Reserved ids, punctuation, and tokens below the frequency threshold.
    pub fn excludes(&self, token: u32) -> bool {
        Vocabulary::is_special(token)
            || self.punctuation.contains(&token)
            || self.frequencies.get(token as usize).is_none_or(|&f| f < self.min_freq)
    }

    /// Membership mask over the vocabulary.
    pub fn included_mask(&self) -> Vec<bool> {
        (0..self.frequencies.len() as u32).map(|t| !self.excludes(t)).collect()
    }
}

/// Final-layer encoder states (evaluation mode) for every non-excluded
/// source token occurrence in `corpus`.
pub fn extract_representations(
    model: &Model<f32>,
    corpus: &ParallelCorpus,
    policy: &ExclusionPolicy,
    batch_size: usize,
) -> Result<RepresentationStore> {
    if model.config.prototype_mode != PrototypeMode::Off {
        return Err(Error::config("representations are extracted from a model without prototype attention"));
    }
    if policy.frequencies.len() != model.config.src_vocab {
        return Err(Error::incompatible(format!(
            "vocabulary has {} tokens but the model expects {}",
            policy.frequencies.len(),
            model.config.src_vocab
        )));
    }
    let d = model.config.d_model;
    let batches = batchify(corpus, batch_size, None)?;
    let states: Vec<(Vec<u32>, Vec<bool>, Vec<f32>)> = batches
        .par_iter()
        .map(|b| {
            let mut g = Graph::new();
            let vars = model.bind(&mut g, false);
            let enc = model.encode(&mut g, &vars, &b.src, None, &mut Phase::Eval)?;
            Ok((b.src.ids.clone(), b.src.pad_mask.clone(), g.value(enc.h).data().to_vec()))
        })
        .collect::<Result<_>>()?;
    let mut store = RepresentationStore::new(d);
    for (ids, pad, h) in &states {
        for (i, (&tok, &is_pad)) in ids.iter().zip(pad).enumerate() {
            if !is_pad && !policy.excludes(tok) {
                store.push(tok, &h[i * d..(i + 1) * d])?;
            }
        }
    }
    Ok(store)
}

/// Cluster each token's representations into `k` prototypes. Tokens with
/// fewer than `k` vectors get their computed centroids repeated cyclically.
pub fn build_prototype_table(store: &RepresentationStore, k: usize, seed: u64) -> Result<PrototypeTable> {
    if k < 1 {
        return Err(Error::config("number of prototypes must be >= 1"));
    }
    if store.is_empty() {
        return Err(Error::Empty("representation store"));
    }
    let d = store.dim();
    let tokens: Vec<u32> = store.tokens().collect();
    let blocks: Vec<(u32, Vec<f32>)> = tokens
        .par_iter()
        .map(|&tok| {
            let points: Vec<f64> = store.vectors(tok).iter().map(|&x| x as f64).collect();
            let n = points.len() / d;
            let config = KMeansConfig { k: k.min(n), seed: seed ^ tok as u64, ..KMeansConfig::default() };
            let fit = kmeans(&points, d, &config)?;
            let k_eff = config.k;
            let mut rows = Vec::with_capacity(k * d);
            for j in 0..k {
                let c = j % k_eff;
                rows.extend(fit.centroids[c * d..(c + 1) * d].iter().map(|&x| x as f32));
            }
            Ok((tok, rows))
        })
        .collect::<Result<_>>()?;
    let mut table = PrototypeTable::new(k, d);
    for (tok, rows) in blocks {
        table.insert(tok, rows)?;
    }
    Ok(table)
}
