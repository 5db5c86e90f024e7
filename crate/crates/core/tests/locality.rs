//! Each position's prototype sublayer sees only its own token's prototypes.

mod common;

use common::*;
use proto_nmt::data::Padded;
use proto_nmt::model::{Model, Phase, PrototypeMode};
use proto_nmt::prototypes::PrototypeTable;
use proto_nmt::tensor::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: u64 = 100;

/// First-layer prototype-sublayer output and the prototype key count.
fn sublayer(model: &Model<f32>, src: &Padded, table: &PrototypeTable) -> (Vec<f32>, usize) {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, false);
    let enc = model.encode(&mut g, &vars, src, Some(table), &mut Phase::Eval).unwrap();
    let out = enc.layers[0].prototype.expect("prototype sublayer present");
    (g.value(out).data().to_vec(), enc.prototype_keys())
}

#[test]
fn perturbing_one_token_only_moves_its_positions() {
    let config = tiny_config(PrototypeMode::ClusteredFrozen);
    let (k, d) = (config.num_prototypes, config.d_model);
    for case in 0..CASES {
        let mut model = Model::new(config.clone(), case).unwrap();
        randomize_prototype_attention(&mut model, case);
        let table: PrototypeTable = random_table(k, d, 4..VOCAB as u32, case);
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let batch = random_batch(&mut rng, 3, 8);
        let src = &batch.src;
        let present: Vec<u32> = src.ids.iter().zip(&src.pad_mask).filter(|(_, &p)| !p).map(|(&t, _)| t).collect();
        let victim = present[rng.gen_range(0..present.len())];

        let mut perturbed = table.clone();
        let rows: Vec<f32> = table.get(victim).unwrap().iter().map(|x| x + rng.gen_range(0.5..2.0)).collect();
        perturbed.insert(victim, rows).unwrap();

        let (before, keys) = sublayer(&model, src, &table);
        let (after, _) = sublayer(&model, src, &perturbed);
        assert_eq!(keys, k * present.len(), "case {case}: key count must be k x T");
        let mut moved = false;
        for (pos, (&tok, &pad)) in src.ids.iter().zip(&src.pad_mask).enumerate() {
            let (a, b) = (&before[pos * d..(pos + 1) * d], &after[pos * d..(pos + 1) * d]);
            if tok == victim && !pad {
                moved |= a != b;
            } else {
                let same = a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
                assert!(same, "case {case}: position {pos} (token {tok}) changed when token {victim} was perturbed");
            }
        }
        assert!(moved, "case {case}: perturbing token {victim} had no effect on its own positions");
    }
}

#[test]
fn key_count_is_linear_in_sentence_length() {
    let config = tiny_config(PrototypeMode::ClusteredFrozen);
    let model = Model::new(config.clone(), 3).unwrap();
    let table: PrototypeTable = random_table(config.num_prototypes, config.d_model, 4..VOCAB as u32, 3);
    for len in [1usize, 2, 4, 8, 16] {
        let src = Padded::new(&[(0..len).map(|i| 4 + (i % 8) as u32).collect::<Vec<_>>()]);
        let (_, keys) = sublayer(&model, &src, &table);
        assert_eq!(keys, config.num_prototypes * len);
    }
}

#[test]
fn tokens_without_prototypes_get_no_keys() {
    let config = tiny_config(PrototypeMode::ClusteredFrozen);
    let model = Model::new(config.clone(), 5).unwrap();
    let table: PrototypeTable = random_table(config.num_prototypes, config.d_model, [4, 5], 5);
    let src = Padded::new(&[vec![4u32, 6, 5, 7, 4]]);
    let (_, keys) = sublayer(&model, &src, &table);
    assert_eq!(keys, 3 * config.num_prototypes);
}
