use std::collections::BTreeMap;

use super::contains_ngram;
use crate::data::{CompoundDictionary, TextCorpus};
use crate::error::{Error, Result};

/// Width of the context-length buckets in the breakdown.
const CONTEXT_BUCKET: usize = 3;

/// Label of the bucket holding a context of `len` tokens, e.g. `3-5`.
pub fn context_bucket(len: usize) -> String {
    let lo = len / CONTEXT_BUCKET * CONTEXT_BUCKET;
    format!("{lo}-{}", lo + CONTEXT_BUCKET - 1)
}

/// Error counts for one slice of the sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct BreakdownRow {
    /// `pattern`, `compound_len`, `context_len` or `has_mod`.
    pub dimension: &'static str,
    pub bucket: String,
    pub samples: usize,
    pub sample_errors: usize,
    pub compounds: usize,
    pub compound_errors: usize,
}

impl BreakdownRow {
    pub fn instance_cter(&self) -> f64 {
        ratio(self.sample_errors, self.samples)
    }

    pub fn aggregate_cter(&self) -> f64 {
        ratio(self.compound_errors, self.compounds)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CterReport {
    /// Per cg-test sentence: was the compound translated correctly.
    pub correct: Vec<bool>,
    pub samples: usize,
    pub sample_errors: usize,
    pub compounds: usize,
    pub compound_errors: usize,
    pub breakdown: Vec<BreakdownRow>,
}

impl CterReport {
    /// Fraction of sentences whose compound is mistranslated.
    pub fn instance_cter(&self) -> f64 {
        ratio(self.sample_errors, self.samples)
    }

    /// Fraction of compounds mistranslated in at least one context.
    pub fn aggregate_cter(&self) -> f64 {
        ratio(self.compound_errors, self.compounds)
    }

    pub fn rows(&self, dimension: &str) -> impl Iterator<Item = &BreakdownRow> {
        let dimension = dimension.to_string();
        self.breakdown.iter().filter(move |r| r.dimension == dimension)
    }
}

/// Score `hypotheses` (aligned with `cg_test`) against the compound dictionary.
/// A sample is correct iff some acceptable n-gram of its compound occurs
/// contiguously in the hypothesis.
pub fn cter<S: AsRef<str>>(
    hypotheses: &[Vec<S>],
    cg_test: &TextCorpus,
    dict: &CompoundDictionary,
) -> Result<CterReport> {
    if hypotheses.len() != cg_test.len() || hypotheses.len() != dict.samples.len() {
        return Err(Error::incompatible(format!(
            "{} hypotheses for {} cg-test sentences and {} dictionary samples",
            hypotheses.len(),
            cg_test.len(),
            dict.samples.len()
        )));
    }
    if let Some(&(e, _)) = dict.samples.iter().find(|&&(e, _)| e >= dict.entries.len()) {
        return Err(Error::incompatible(format!("compound {e} is missing from the dictionary")));
    }
    let correct: Vec<bool> = hypotheses
        .iter()
        .zip(&dict.samples)
        .map(|(h, &(e, _))| {
            let h: Vec<&str> = h.iter().map(AsRef::as_ref).collect();
            dict.entries[e].acceptable.iter().any(|a| {
                let a: Vec<&str> = a.iter().map(String::as_str).collect();
                contains_ngram(&h, &a)
            })
        })
        .collect();

    // (dimension, bucket) -> (samples, errors, per-compound wrong flag)
    type Cell = (usize, usize, BTreeMap<usize, bool>);
    let mut cells: BTreeMap<(&'static str, String), Cell> = BTreeMap::new();
    for (i, (&ok, &(e, _))) in correct.iter().zip(&dict.samples).enumerate() {
        let entry = &dict.entries[e];
        let context = cg_test.pairs[i].0.len().saturating_sub(entry.len());
        let keys = [
            ("pattern", entry.pattern.to_string()),
            ("compound_len", entry.len().to_string()),
            ("context_len", context_bucket(context)),
            ("has_mod", u8::from(entry.has_mod).to_string()),
        ];
        for key in keys {
            let cell = cells.entry(key).or_default();
            cell.0 += 1;
            cell.1 += usize::from(!ok);
            *cell.2.entry(e).or_default() |= !ok;
        }
    }
    let mut breakdown: Vec<BreakdownRow> = cells
        .into_iter()
        .map(|((dimension, bucket), (samples, sample_errors, comps))| BreakdownRow {
            dimension,
            bucket,
            samples,
            sample_errors,
            compounds: comps.len(),
            compound_errors: comps.values().filter(|&&w| w).count(),
        })
        .collect();
    let order = |d: &str| ["pattern", "compound_len", "context_len", "has_mod"].iter().position(|&x| x == d);
    breakdown.sort_by(|a, b| {
        order(a.dimension).cmp(&order(b.dimension)).then_with(|| natural_key(&a.bucket).cmp(&natural_key(&b.bucket)))
    });

    let mut wrong: BTreeMap<usize, bool> = BTreeMap::new();
    for (&ok, &(e, _)) in correct.iter().zip(&dict.samples) {
        *wrong.entry(e).or_default() |= !ok;
    }
    Ok(CterReport {
        samples: correct.len(),
        sample_errors: correct.iter().filter(|&&c| !c).count(),
        compounds: wrong.len(),
        compound_errors: wrong.values().filter(|&&w| w).count(),
        correct,
        breakdown,
    })
}

/// Numeric buckets sort by value, others lexicographically.
fn natural_key(bucket: &str) -> (usize, String) {
    let lead: String = bucket.chars().take_while(char::is_ascii_digit).collect();
    (lead.parse().unwrap_or(usize::MAX), bucket.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CompoundEntry, Pattern, Split};

    fn w(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn buckets() {
        assert_eq!(context_bucket(0), "0-2");
        assert_eq!(context_bucket(5), "3-5");
        assert_eq!(context_bucket(6), "6-8");
    }

    #[test]
    fn natural_order() {
        let mut b = vec!["12-14", "3-5", "0-2"];
        b.sort_by_key(|s| natural_key(s));
        assert_eq!(b, ["0-2", "3-5", "12-14"]);
    }

    #[test]
    fn count_mismatch_and_missing_compound() {
        let dict = CompoundDictionary {
            entries: vec![CompoundEntry {
                source: w("a b"),
                acceptable: vec![w("x y")],
                pattern: Pattern::Np,
                has_mod: false,
            }],
            samples: vec![(0, 0)],
        };
        let corpus = TextCorpus::new(Split::CgTest, vec![(w("a b"), w("x y"))]);
        assert!(cter::<String>(&[], &corpus, &dict).is_err());
        let broken = CompoundDictionary { samples: vec![(3, 0)], ..dict.clone() };
        assert!(cter(&[w("x y")], &corpus, &broken).is_err());
        assert_eq!(cter(&[w("q x y")], &corpus, &dict).unwrap().instance_cter(), 0.0);
    }
}
