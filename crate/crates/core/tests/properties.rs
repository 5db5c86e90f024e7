//! Randomized invariants of the numerical core.

use std::rc::Rc;

use proptest::prelude::*;
use proto_nmt::tensor::{AttentionMask, Graph, Tensor, LAYER_NORM_EPS};

const CASES: u32 = 1000;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1..=max_rows, 1..=max_cols)
        .prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-30.0f64..30.0, r * c)))
}

/// Mean and population variance.
fn moments(row: &[f64]) -> (f64, f64) {
    let mean = row.iter().sum::<f64>() / row.len() as f64;
    (mean, row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn softmax_rows_are_distributions_and_shift_invariant(
        (r, c, data) in matrix(6, 9),
        shift in -50.0f64..50.0,
    ) {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![r, c], data.clone()).unwrap());
        let xs = g.leaf(Tensor::new(vec![r, c], data.iter().map(|v| v + shift).collect()).unwrap());
        let (p, ps) = (g.softmax_rows(x).unwrap(), g.softmax_rows(xs).unwrap());
        for (row, row_s) in g.value(p).data().chunks(c).zip(g.value(ps).data().chunks(c)) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            for (a, b) in row.iter().zip(row_s) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_rows_have_zero_mean_unit_variance(
        (r, c, data) in matrix(6, 16).prop_filter("needs spread", |(_, c, d)| {
            *c >= 2 && d.chunks(*c).all(|row| row.iter().any(|&v| (v - row[0]).abs() > 1e-2))
        }),
    ) {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![r, c], data.clone()).unwrap());
        let gain = g.leaf(Tensor::full(vec![c], 1.0));
        let bias = g.leaf(Tensor::zeros(vec![c]));
        let y = g.layer_norm(x, gain, bias).unwrap();
        for (row, input) in g.value(y).data().chunks(c).zip(data.chunks(c)) {
            let (mean, var) = moments(row);
            prop_assert!(mean.abs() < 1e-9);
            // The epsilon inside the square root scales the variance by v / (v + eps).
            let raw = moments(input).1;
            let expected = raw / (raw + LAYER_NORM_EPS);
            prop_assert!((var - expected).abs() < 1e-9, "variance {var}, expected {expected}");
            if raw > 1e-2 {
                prop_assert!((var - 1.0).abs() < 1e-3, "variance {var}");
            }
        }
    }

    #[test]
    fn attention_outputs_are_convex_combinations_of_allowed_values(
        nq in 1usize..5,
        nk in 1usize..6,
        heads in 1usize..3,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let hd = 2;
        let d = heads * hd;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rand_mat = |n: usize| -> Vec<f64> { (0..n * d).map(|_| rng.gen_range(-3.0..3.0)).collect() };
        let (q, k, v) = (rand_mat(nq), rand_mat(nk), rand_mat(nk));
        let dense: Vec<Vec<bool>> = (0..nq).map(|_| (0..nk).map(|_| rng.gen_bool(0.6)).collect()).collect();
        let mask = Rc::new(AttentionMask::from_dense(&dense, nk));
        let mut g = Graph::new();
        let (qv, kv, vv) = (
            g.leaf(Tensor::new(vec![nq, d], q).unwrap()),
            g.leaf(Tensor::new(vec![nk, d], k).unwrap()),
            g.leaf(Tensor::new(vec![nk, d], v.clone()).unwrap()),
        );
        let out = g.attention(qv, kv, vv, heads, mask.clone(), None).unwrap();
        let weights = g.attention_weights(out).unwrap().to_vec();
        let out = g.value(out).data().to_vec();
        let nnz = mask.nnz();
        for i in 0..nq {
            let allowed: Vec<usize> = (0..nk).filter(|&j| dense[i][j]).collect();
            for h in 0..heads {
                let w = &weights[h * nnz + mask.row_range(i).start..h * nnz + mask.row_range(i).end];
                if allowed.is_empty() {
                    prop_assert!(out[i * d + h * hd..i * d + (h + 1) * hd].iter().all(|&x| x == 0.0));
                    continue;
                }
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for c in h * hd..(h + 1) * hd {
                    let (lo, hi) = allowed.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &j| {
                        (lo.min(v[j * d + c]), hi.max(v[j * d + c]))
                    });
                    let o = out[i * d + c];
                    prop_assert!(o >= lo - 1e-12 && o <= hi + 1e-12);
                    let expect: f64 = allowed.iter().zip(w).map(|(&j, &wj)| wj * v[j * d + c]).sum();
                    prop_assert!((o - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn attention_ignores_masked_keys(
        nk in 2usize..6,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let d = 4;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let k: Vec<f64> = (0..nk * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..nk * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let blocked = rng.gen_range(0..nk);
        let row: Vec<bool> = (0..nk).map(|j| j != blocked).collect();
        let mask = Rc::new(AttentionMask::from_dense(&[row], nk));
        let run = |k: Vec<f64>, v: Vec<f64>| {
            let mut g = Graph::new();
            let qv = g.leaf(Tensor::new(vec![1, d], q.clone()).unwrap());
            let kv = g.leaf(Tensor::new(vec![nk, d], k).unwrap());
            let vv = g.leaf(Tensor::new(vec![nk, d], v).unwrap());
            let o = g.attention(qv, kv, vv, 2, mask.clone(), None).unwrap();
            g.value(o).data().to_vec()
        };
        let base = run(k.clone(), v.clone());
        let (mut k2, mut v2) = (k, v);
        for c in 0..d {
            k2[blocked * d + c] += 100.0;
            v2[blocked * d + c] -= 100.0;
        }
        prop_assert_eq!(base, run(k2, v2));
    }
}
