use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::ParallelCorpus;
use super::vocab::{BOS, EOS, PAD};
use crate::error::{Error, Result};

/// Sequences padded with PAD to a common width, flattened row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Padded {
    pub ids: Vec<u32>,
    pub lens: Vec<usize>,
    pub width: usize,
    /// `true` at padding positions.
    pub pad_mask: Vec<bool>,
}

impl Padded {
    pub fn new<S: AsRef<[u32]>>(seqs: &[S]) -> Self {
        let width = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * width);
        let mut pad_mask = Vec::with_capacity(seqs.len() * width);
        for s in seqs {
            let s = s.as_ref();
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat_n(PAD, width - s.len()));
            pad_mask.extend((0..width).map(|t| t >= s.len()));
        }
        Self { ids, lens: seqs.iter().map(|s| s.as_ref().len()).collect(), width, pad_mask }
    }

    pub fn batch_size(&self) -> usize {
        self.lens.len()
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn seq(&self, b: usize) -> &[u32] {
        &self.ids[b * self.width..b * self.width + self.lens[b]]
    }
}

/// One training batch: source, decoder input (`BOS y`), and decoder target (`y EOS`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub src: Padded,
    pub tgt_in: Padded,
    pub tgt_out: Padded,
    /// Corpus indices of the sentences in this batch.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn from_pairs(pairs: &[(&[u32], &[u32])], indices: Vec<usize>) -> Self {
        let src: Vec<&[u32]> = pairs.iter().map(|p| p.0).collect();
        let tin: Vec<Vec<u32>> = pairs.iter().map(|p| [&[BOS][..], p.1].concat()).collect();
        let tout: Vec<Vec<u32>> = pairs.iter().map(|p| [p.1, &[EOS][..]].concat()).collect();
        Self { src: Padded::new(&src), tgt_in: Padded::new(&tin), tgt_out: Padded::new(&tout), indices }
    }

    /// Decoder targets with padding positions masked out of the loss.
    pub fn targets(&self) -> Vec<Option<usize>> {
        self.tgt_out.ids.iter().zip(&self.tgt_out.pad_mask).map(|(&id, &pad)| (!pad).then_some(id as usize)).collect()
    }

    pub fn n_target_tokens(&self) -> usize {
        self.tgt_out.lens.iter().sum()
    }
}

/// Split `corpus` into batches of `batch_size` sentences.
///
/// With `shuffle_seed` the sentence order is a deterministic permutation drawn
/// from that seed; otherwise corpus order is kept.
pub fn batchify(corpus: &ParallelCorpus, batch_size: usize, shuffle_seed: Option<u64>) -> Result<Vec<Batch>> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order
        .chunks(batch_size)
        .map(|idx| {
            let pairs: Vec<(&[u32], &[u32])> =
                idx.iter().map(|&i| (&corpus.pairs[i].0[..], &corpus.pairs[i].1[..])).collect();
            Batch::from_pairs(&pairs, idx.to_vec())
        })
        .collect())
}
