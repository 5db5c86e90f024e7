use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

const MAX_ORDER: usize = 4;

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Corpus-level BLEU-4 in `[0, 100]` without smoothing.
pub fn bleu<T: Hash + Eq>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    bleu_with(hypotheses, references, false)
}

/// Corpus-level BLEU-4. With `add_one`, orders above one use
/// `(matches + 1) / (total + 1)`; otherwise any zero precision gives 0.
pub fn bleu_with<T: Hash + Eq>(hypotheses: &[Vec<T>], references: &[Vec<T>], add_one: bool) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::incompatible(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..MAX_ORDER {
        let (m, t) = if add_one && n > 0 { (matches[n] + 1, totals[n] + 1) } else { (matches[n], totals[n]) };
        if m == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let brevity = if hyp_len >= ref_len { 1.0 } else { (1.0 - ref_len as f64 / hyp_len as f64).exp() };
    Ok(100.0 * brevity * (log_sum / MAX_ORDER as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identity_and_disjoint() {
        let a = vec![w("a b c d e")];
        assert!((bleu(&a, &a).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(bleu(&[w("x y z w")], &a).unwrap(), 0.0);
        assert!(bleu(&a, &[]).is_err());
    }

    #[test]
    fn smoothing_rescues_missing_fourgrams() {
        let h = [w("a b c x")];
        let r = [w("a b c d")];
        assert_eq!(bleu(&h, &r).unwrap(), 0.0);
        let expected = 100.0 * (0.75f64 * (3.0 / 4.0) * (2.0 / 3.0) * (1.0 / 2.0)).powf(0.25);
        assert!((bleu_with(&h, &r, true).unwrap() - expected).abs() < 1e-9);
    }
}
