//! Analytic gradients of a full encoder-decoder loss against central finite
//! differences in 64-bit precision.

mod common;

use common::*;
use proto_nmt::model::{Model, Phase, PrototypeMode};
use proto_nmt::prototypes::PrototypeTable;
use proto_nmt::tensor::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SAMPLES: usize = 50;
const STEP: f64 = 1e-5;
const MAX_REL_ERR: f64 = 1e-5;

fn loss(model: &Model<f64>, batch: &proto_nmt::data::Batch, table: Option<&PrototypeTable<f64>>) -> f64 {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, false);
    let l = model.batch_loss(&mut g, &vars, batch, table, &mut Phase::Eval, 0.1).unwrap();
    g.value(l).data()[0]
}

fn check(mode: PrototypeMode, seed: u64) {
    let mut model: Model<f64> = Model::<f32>::new(tiny_config(mode), seed).unwrap().cast();
    randomize_prototype_attention(&mut model, seed + 1);
    let table = (mode == PrototypeMode::ClusteredFrozen).then(|| random_table::<f64>(2, 8, 4..VOCAB as u32, seed + 2));
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    let batch = random_batch(&mut rng, 3, 6);

    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let l = model.batch_loss(&mut g, &vars, &batch, table.as_ref(), &mut Phase::Eval, 0.1).unwrap();
    g.backward(l).unwrap();
    let analytic: Vec<Vec<f64>> =
        vars.iter().map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).numel()])).collect();

    let sizes: Vec<usize> = model.params.iter().map(|(_, p)| p.value.numel()).collect();
    let total: usize = sizes.iter().sum();
    let mut worst = 0.0f64;
    for _ in 0..SAMPLES {
        // Sample uniformly over scalars so large matrices are not underweighted.
        let mut flat = rng.gen_range(0..total);
        let pi = sizes
            .iter()
            .position(|&n| {
                if flat < n {
                    true
                } else {
                    flat -= n;
                    false
                }
            })
            .unwrap();
        let orig = model.params.by_index(pi).1.value.data()[flat];
        model.params.by_index_mut(pi).value.data_mut()[flat] = orig + STEP;
        let up = loss(&model, &batch, table.as_ref());
        model.params.by_index_mut(pi).value.data_mut()[flat] = orig - STEP;
        let down = loss(&model, &batch, table.as_ref());
        model.params.by_index_mut(pi).value.data_mut()[flat] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic[pi][flat];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
        assert!(
            rel < MAX_REL_ERR,
            "{} [{flat}]: analytic {a:e}, numeric {numeric:e}, rel {rel:e}",
            model.params.by_index(pi).0
        );
        worst = worst.max(rel);
    }
    println!("{mode:?}: worst relative error over {SAMPLES} parameters {worst:e}");
}

#[test]
fn baseline_gradients_match_finite_differences() {
    check(PrototypeMode::Off, 11);
}

#[test]
fn clustered_prototype_gradients_match_finite_differences() {
    check(PrototypeMode::ClusteredFrozen, 23);
}

#[test]
fn trainable_prototype_gradients_match_finite_differences() {
    check(PrototypeMode::RandomTrainable, 37);
}
