//! Attaching zero-output prototype attention leaves the model's function unchanged.

mod common;

use common::*;
use proto_nmt::model::{count_specs, param_specs, CountScope, Model, ModelConfig, Phase, PrototypeMode};
use proto_nmt::pipeline::attach_prototype_attention;
use proto_nmt::prototypes::PrototypeTable;
use proto_nmt::tensor::Graph;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const BATCHES: u64 = 100;
const TOLERANCE: f32 = 1e-5;

fn logits(model: &Model<f32>, batch: &proto_nmt::data::Batch, table: Option<&PrototypeTable>) -> Vec<f32> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, false);
    let enc = model.encode(&mut g, &vars, &batch.src, table, &mut Phase::Eval).unwrap();
    let out = model.decode(&mut g, &vars, &batch.tgt_in, &enc, &mut Phase::Eval).unwrap();
    g.value(out).data().to_vec()
}

#[test]
fn forward_outputs_are_preserved() {
    let base = Model::new(tiny_config(PrototypeMode::Off), 9).unwrap();
    let tokens = vec![true; VOCAB];
    let frozen = attach_prototype_attention(&base, PrototypeMode::ClusteredFrozen, 2, tokens.clone(), 9).unwrap();
    let random = attach_prototype_attention(&base, PrototypeMode::RandomTrainable, 2, tokens, 9).unwrap();
    let table: PrototypeTable = random_table(2, 8, 4..VOCAB as u32, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f32;
    for _ in 0..BATCHES {
        let batch = random_batch(&mut rng, 4, 10);
        let reference = logits(&base, &batch, None);
        for out in [logits(&frozen, &batch, Some(&table)), logits(&random, &batch, None)] {
            let diff = reference.iter().zip(&out).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            worst = worst.max(diff);
        }
    }
    println!("max abs logit difference over {BATCHES} batches: {worst:e}");
    assert!(worst < TOLERANCE);
}

#[test]
fn base_parameters_are_copied_bitwise() {
    let base = Model::new(tiny_config(PrototypeMode::Off), 4).unwrap();
    let ext = attach_prototype_attention(&base, PrototypeMode::ClusteredFrozen, 2, vec![true; VOCAB], 4).unwrap();
    for (name, p) in base.params.iter() {
        assert_eq!(ext.params.get(name).unwrap().value, p.value, "{name}");
    }
    assert_eq!(ext.params.checksum(CountScope::Base), base.params.checksum(CountScope::Base));
}

#[test]
fn parameter_delta_is_four_projections_per_layer() {
    for (d, layers) in [(8usize, 2usize), (64, 2), (32, 3)] {
        let config = ModelConfig {
            d_model: d,
            n_heads: 4,
            n_encoder_layers: layers,
            d_ff: 2 * d,
            src_vocab: 30,
            tgt_vocab: 30,
            ..Default::default()
        };
        let base = Model::new(config, 1).unwrap();
        let ext = attach_prototype_attention(&base, PrototypeMode::ClusteredFrozen, 3, vec![true; 30], 1).unwrap();
        let delta = ext.params.count(CountScope::All) - base.params.count(CountScope::All);
        assert_eq!(delta, layers * (4 * d * d + 4 * d));
    }
}

#[test]
fn paper_scale_delta_without_biases() {
    let config = ModelConfig {
        d_model: 512,
        n_heads: 8,
        n_encoder_layers: 6,
        n_decoder_layers: 6,
        d_ff: 2048,
        src_vocab: 10,
        tgt_vocab: 10,
        ..Default::default()
    };
    let count = |mode, bias| {
        count_specs(&param_specs(&ModelConfig { prototype_mode: mode, ..config.clone() }), CountScope::All, bias)
    };
    let without_bias = count(PrototypeMode::ClusteredFrozen, false) - count(PrototypeMode::Off, false);
    assert_eq!(without_bias, 6_291_456);
    assert_eq!(config.prototype_attention_params(false), without_bias);
    let with_bias = count(PrototypeMode::ClusteredFrozen, true) - count(PrototypeMode::Off, true);
    assert_eq!(with_bias, 6 * (4 * 512 * 512 + 4 * 512));
}
