#![allow(dead_code)]

use proto_nmt::data::Batch;
use proto_nmt::model::{Model, ModelConfig, PrototypeMode};
use proto_nmt::prototypes::PrototypeTable;
use proto_nmt::tensor::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VOCAB: usize = 12;

pub fn tiny_config(mode: PrototypeMode) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_encoder_layers: 2,
        n_decoder_layers: 2,
        d_ff: 12,
        src_vocab: VOCAB,
        tgt_vocab: VOCAB,
        max_len: 16,
        dropout: 0.1,
        num_prototypes: 2,
        prototype_mode: mode,
    }
}

/// Random sentence pairs over ids `4..VOCAB`.
pub fn random_batch(rng: &mut ChaCha8Rng, sentences: usize, max_len: usize) -> Batch {
    let seq = |rng: &mut ChaCha8Rng| -> Vec<u32> {
        let n = rng.gen_range(1..=max_len);
        (0..n).map(|_| rng.gen_range(4..VOCAB as u32)).collect()
    };
    let pairs: Vec<(Vec<u32>, Vec<u32>)> = (0..sentences).map(|_| (seq(rng), seq(rng))).collect();
    let refs: Vec<(&[u32], &[u32])> = pairs.iter().map(|(s, t)| (s.as_slice(), t.as_slice())).collect();
    Batch::from_pairs(&refs, (0..sentences).collect())
}

/// Prototype table with random rows for every token in `tokens`.
pub fn random_table<T: Float>(
    k: usize,
    d: usize,
    tokens: impl IntoIterator<Item = u32>,
    seed: u64,
) -> PrototypeTable<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = PrototypeTable::new(k, d);
    for t in tokens {
        table.insert(t, (0..k * d).map(|_| T::of(rng.gen_range(-1.0..1.0))).collect()).unwrap();
    }
    table
}

/// Overwrite every prototype-attention parameter with random values so the
/// sublayer contributes to the output.
pub fn randomize_prototype_attention<T: Float>(model: &mut Model<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, p) in model.params.iter_mut() {
        if name.contains(".proto.") {
            for x in p.value.data_mut() {
                *x = T::of(rng.gen_range(-0.5..0.5));
            }
        }
    }
}
