use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Independent k-means++ restarts; the lowest-inertia run wins.
    pub n_init: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { k: 1, max_iter: 100, n_init: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// `k x d`, row-major.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squared distances.
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning run.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(d).enumerate() {
        let dist = sq_dist(p, c);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

fn seed_plus_plus(points: &[f64], d: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / d;
    let mut centroids = Vec::with_capacity(k * d);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(&points[first * d..(first + 1) * d]);
    let mut dist: Vec<f64> = points.chunks_exact(d).map(|p| sq_dist(p, &centroids[..d])).collect();
    while centroids.len() < k * d {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        let c = points[pick * d..(pick + 1) * d].to_vec();
        for (di, p) in dist.iter_mut().zip(points.chunks_exact(d)) {
            *di = di.min(sq_dist(p, &c));
        }
        centroids.extend(c);
    }
    centroids
}

fn lloyd(points: &[f64], d: usize, mut centroids: Vec<f64>, max_iter: usize) -> KMeans {
    let n = points.len() / d;
    let k = centroids.len() / d;
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut inertia = f64::INFINITY;
    for _ in 0..max_iter {
        let mut changed = false;
        let mut assigned_inertia = 0.0;
        for (i, p) in points.chunks_exact(d).enumerate() {
            let (j, dist) = nearest(p, &centroids, d);
            changed |= assignments[i] != j;
            assignments[i] = j;
            assigned_inertia += dist;
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.chunks_exact(d).zip(&assignments) {
            counts[j] += 1;
            for (s, x) in sums[j * d..(j + 1) * d].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            // Empty clusters keep their previous centroid.
            if counts[j] > 0 {
                for (c, s) in centroids[j * d..(j + 1) * d].iter_mut().zip(&sums[j * d..(j + 1) * d]) {
                    *c = s / counts[j] as f64;
                }
            }
        }
        let updated: f64 =
            points.chunks_exact(d).zip(&assignments).map(|(p, &j)| sq_dist(p, &centroids[j * d..(j + 1) * d])).sum();
        let slack = 1e-12 * inertia.abs().max(1.0);
        assert!(
            updated <= assigned_inertia + slack && assigned_inertia <= inertia + slack,
            "k-means inertia increased"
        );
        inertia = updated;
        history.push(inertia);
    }
    if history.is_empty() {
        inertia =
            points.chunks_exact(d).zip(&assignments).map(|(p, &j)| sq_dist(p, &centroids[j * d..(j + 1) * d])).sum();
        history.push(inertia);
    }
    let mut fit = KMeans { centroids, assignments, inertia, history };
    hartigan(points, d, &mut fit, max_iter);
    fit
}

/// Single-point moves that lower the inertia, accounting for both centroid
/// shifts.
fn hartigan(points: &[f64], d: usize, fit: &mut KMeans, max_sweeps: usize) {
    let k = fit.centroids.len() / d;
    let mut counts = vec![0usize; k];
    for &j in &fit.assignments {
        counts[j] += 1;
    }
    for _ in 0..max_sweeps {
        let mut moved = false;
        for (i, p) in points.chunks_exact(d).enumerate() {
            let from = fit.assignments[i];
            if counts[from] < 2 {
                continue;
            }
            let na = counts[from] as f64;
            let removal = na / (na - 1.0) * sq_dist(p, &fit.centroids[from * d..(from + 1) * d]);
            let mut best = (from, 0.0);
            for to in (0..k).filter(|&j| j != from) {
                let nb = counts[to] as f64;
                let delta = nb / (nb + 1.0) * sq_dist(p, &fit.centroids[to * d..(to + 1) * d]) - removal;
                if delta < best.1 - 1e-12 * removal.max(1.0) {
                    best = (to, delta);
                }
            }
            let to = best.0;
            if to == from {
                continue;
            }
            let nb = counts[to] as f64;
            for (c, &x) in p.iter().enumerate() {
                let a = &mut fit.centroids[from * d + c];
                *a = (*a * na - x) / (na - 1.0);
                let b = &mut fit.centroids[to * d + c];
                *b = (*b * nb + x) / (nb + 1.0);
            }
            counts[from] -= 1;
            counts[to] += 1;
            fit.assignments[i] = to;
            moved = true;
        }
        if !moved {
            break;
        }
        // Recompute exactly so incremental updates do not drift.
        let mut sums = vec![0.0; k * d];
        for (p, &j) in points.chunks_exact(d).zip(&fit.assignments) {
            for (s, x) in sums[j * d..(j + 1) * d].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in (0..k).filter(|&j| counts[j] > 0) {
            for (c, s) in fit.centroids[j * d..(j + 1) * d].iter_mut().zip(&sums[j * d..(j + 1) * d]) {
                *c = s / counts[j] as f64;
            }
        }
        let inertia: f64 = points
            .chunks_exact(d)
            .zip(&fit.assignments)
            .map(|(p, &j)| sq_dist(p, &fit.centroids[j * d..(j + 1) * d]))
            .sum();
        assert!(inertia <= fit.inertia + 1e-12 * fit.inertia.abs().max(1.0), "k-means inertia increased");
        fit.inertia = inertia;
        fit.history.push(inertia);
    }
}

/// Lloyd's algorithm with k-means++ seeding on `n x d` row-major `points`.
///
/// Stops when assignments are stable or after `max_iter` iterations, then
/// refines with single-point moves.
pub fn kmeans(points: &[f64], d: usize, config: &KMeansConfig) -> Result<KMeans> {
    if d == 0 || points.is_empty() || !points.len().is_multiple_of(d) {
        return Err(Error::Empty("k-means point list"));
    }
    if config.k < 1 || config.max_iter < 1 || config.n_init < 1 {
        return Err(Error::config("k-means needs k, max_iter and n_init >= 1"));
    }
    let n = points.len() / d;
    if config.k > n {
        return Err(Error::config(format!("cannot fit {} centroids to {n} points", config.k)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..config.n_init {
        let init = seed_plus_plus(points, d, config.k, &mut rng);
        let fit = lloyd(points, d, init, config.max_iter);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(points: &[f64], d: usize, k: usize) -> KMeans {
        kmeans(points, d, &KMeansConfig { k, seed: 5, ..Default::default() }).unwrap()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = [1.0, 2.0, 3.0, 6.0, 5.0, 1.0];
        let f = fit(&pts, 2, 1);
        assert!((f.centroids[0] - 3.0).abs() < 1e-12 && (f.centroids[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_pairs_on_a_line() {
        let f = fit(&[0.0, 0.0, 10.0, 10.0], 1, 2);
        let mut c = f.centroids.clone();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.0, 10.0]);
        assert_eq!(f.inertia, 0.0);
    }

    #[test]
    fn enough_centroids_means_zero_inertia() {
        let f = fit(&[1.0, 1.0, 1.0, 4.0, 4.0], 1, 3);
        assert_eq!(f.inertia, 0.0);
    }

    #[test]
    fn errors() {
        assert!(kmeans(&[], 2, &KMeansConfig::default()).is_err());
        assert!(kmeans(&[1.0], 1, &KMeansConfig { k: 0, ..Default::default() }).is_err());
        assert!(kmeans(&[1.0], 1, &KMeansConfig { k: 2, ..Default::default() }).is_err());
    }

    #[test]
    fn deterministic() {
        let pts: Vec<f64> = (0..40).map(|i| ((i * 7919) % 23) as f64).collect();
        let c = KMeansConfig { k: 3, seed: 11, ..Default::default() };
        assert_eq!(kmeans(&pts, 2, &c).unwrap(), kmeans(&pts, 2, &c).unwrap());
    }
}
