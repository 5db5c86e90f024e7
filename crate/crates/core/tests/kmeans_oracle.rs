//! k-means against exhaustive search over every assignment of points to clusters.

use proptest::prelude::*;
use proto_nmt::prototypes::{kmeans, KMeansConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: u64 = 200;

/// Minimum within-cluster sum of squares over all partitions into at most `k` groups.
fn brute_force_inertia(points: &[f64], d: usize, k: usize) -> f64 {
    let n = points.len() / d;
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut cost = 0.0;
        for c in 0..k {
            let members: Vec<&[f64]> =
                (0..n).filter(|&i| labels[i] == c).map(|i| &points[i * d..(i + 1) * d]).collect();
            if members.is_empty() {
                continue;
            }
            for dim in 0..d {
                let mean = members.iter().map(|p| p[dim]).sum::<f64>() / members.len() as f64;
                cost += members.iter().map(|p| (p[dim] - mean).powi(2)).sum::<f64>();
            }
        }
        best = best.min(cost);
        // Odometer increment over k^n labelings.
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

#[test]
fn matches_exhaustive_oracle() {
    let mut worst = 0.0f64;
    for case in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let n = rng.gen_range(1..=10);
        let k = rng.gen_range(1..=3usize.min(n));
        let d = rng.gen_range(1..=3);
        // Mix well-separated blobs with uniform noise.
        let points: Vec<f64> =
            (0..n * d)
                .map(|i| {
                    if case % 2 == 0 {
                        rng.gen_range(-5.0..5.0)
                    } else {
                        (i % 3) as f64 * 4.0 + rng.gen_range(-1.0..1.0)
                    }
                })
                .collect();
        let fit = kmeans(&points, d, &KMeansConfig { k, seed: case, ..Default::default() }).unwrap();
        let oracle = brute_force_inertia(&points, d, k);
        let gap = (fit.inertia - oracle).abs();
        assert!(gap < 1e-9, "case {case}: n={n} k={k} d={d}: k-means {} vs oracle {oracle}", fit.inertia);
        worst = worst.max(gap);
    }
    println!("{INSTANCES} instances, worst inertia gap {worst:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn inertia_never_increases_and_matches_assignments(
        n in 1usize..40,
        d in 1usize..4,
        k in 1usize..6,
        seed in any::<u64>(),
    ) {
        let k = k.min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let fit = kmeans(&points, d, &KMeansConfig { k, seed, ..Default::default() }).unwrap();
        prop_assert!(fit.history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let recomputed: f64 = points
            .chunks(d)
            .zip(&fit.assignments)
            .map(|(p, &j)| p.iter().zip(&fit.centroids[j * d..(j + 1) * d]).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum();
        prop_assert!((recomputed - fit.inertia).abs() < 1e-9 * fit.inertia.max(1.0));
        for (p, &j) in points.chunks(d).zip(&fit.assignments) {
            let dist = |c: usize| p.iter().zip(&fit.centroids[c * d..(c + 1) * d]).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            prop_assert!((0..k).all(|c| dist(j) <= dist(c) + 1e-9));
        }
    }
}
