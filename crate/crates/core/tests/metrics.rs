//! CTER and BLEU against independent oracles and hand-computed values.

use std::collections::HashMap;

use proptest::prelude::*;
use proto_nmt::data::{CompoundDictionary, CompoundEntry, Pattern, Split, TextCorpus};
use proto_nmt::eval::{bleu, bleu_with, cter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn w(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Random dictionary, cg-test corpus and hypotheses over a tiny alphabet.
fn mini_corpus(seed: u64) -> (CompoundDictionary, TextCorpus, Vec<Vec<String>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphabet = ["a", "b", "c", "d", "e"];
    let word = |rng: &mut ChaCha8Rng, len: std::ops::RangeInclusive<usize>| -> Vec<String> {
        let n = rng.gen_range(len);
        (0..n).map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string()).collect()
    };
    let n_compounds = rng.gen_range(1..=4);
    let contexts = rng.gen_range(1..=4);
    let mut dict = CompoundDictionary::default();
    let mut pairs = Vec::new();
    let mut hyps = Vec::new();
    for e in 0..n_compounds {
        let acceptable: Vec<Vec<String>> = (0..rng.gen_range(1..=2)).map(|_| word(&mut rng, 1..=3)).collect();
        let source = word(&mut rng, 2..=4);
        dict.entries.push(CompoundEntry {
            source: source.clone(),
            acceptable: acceptable.clone(),
            pattern: Pattern::ALL[rng.gen_range(0..3)],
            has_mod: rng.gen_bool(0.3),
        });
        for ctx in 0..contexts {
            dict.samples.push((e, ctx));
            let mut src = word(&mut rng, 0..=3);
            src.extend(source.iter().cloned());
            pairs.push((src, w("r")));
            let hyp = if rng.gen_bool(0.5) {
                let mut h = word(&mut rng, 0..=2);
                h.extend(acceptable[rng.gen_range(0..acceptable.len())].iter().cloned());
                h.extend(word(&mut rng, 0..=2));
                h
            } else {
                word(&mut rng, 0..=5)
            };
            hyps.push(hyp);
        }
    }
    (dict, TextCorpus::new(Split::CgTest, pairs), hyps)
}

/// Exhaustive oracle: string containment with space padding, then per-compound grouping.
fn oracle(dict: &CompoundDictionary, hyps: &[Vec<String>]) -> (f64, f64) {
    let mut per_compound: HashMap<usize, Vec<bool>> = HashMap::new();
    let mut wrong = 0;
    for (h, &(e, _)) in hyps.iter().zip(&dict.samples) {
        let padded = format!(" {} ", h.join(" "));
        let ok = dict.entries[e].acceptable.iter().any(|a| padded.contains(&format!(" {} ", a.join(" "))));
        wrong += usize::from(!ok);
        per_compound.entry(e).or_default().push(ok);
    }
    let agg = per_compound.values().filter(|v| v.iter().any(|&ok| !ok)).count();
    (wrong as f64 / hyps.len() as f64, agg as f64 / per_compound.len() as f64)
}

#[test]
fn worked_example_two_compounds_three_contexts() {
    let entry =
        |s: &str, t: &str| CompoundEntry { source: w(s), acceptable: vec![w(t)], pattern: Pattern::Np, has_mod: false };
    let dict = CompoundDictionary {
        entries: vec![entry("the red car", "le car red"), entry("a blue dog", "un dog blue")],
        samples: vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)],
    };
    let corpus = TextCorpus::new(Split::CgTest, (0..6).map(|_| (w("x y z"), w("r"))).collect());
    let hyps = [
        w("i saw le car red"),
        w("le car blue ."),
        w("le red car"),
        w("un dog blue"),
        w("un dog blue today"),
        w("yes un dog blue"),
    ];
    let r = cter(&hyps, &corpus, &dict).unwrap();
    assert_eq!((r.sample_errors, r.samples), (2, 6));
    assert_eq!((r.compound_errors, r.compounds), (1, 2));
    assert!((r.instance_cter() - 2.0 / 6.0).abs() < 1e-15);
    assert_eq!(r.aggregate_cter(), 0.5);
    assert_eq!(oracle(&dict, &hyps), (2.0 / 6.0, 0.5));
}

#[test]
fn matches_oracle_on_fifty_mini_corpora() {
    for seed in 0..50 {
        let (dict, corpus, hyps) = mini_corpus(seed);
        let r = cter(&hyps, &corpus, &dict).unwrap();
        let (inst, agg) = oracle(&dict, &hyps);
        assert!((r.instance_cter() - inst).abs() < 1e-15, "corpus {seed}");
        assert!((r.aggregate_cter() - agg).abs() < 1e-15, "corpus {seed}");
    }
}

#[test]
fn all_correct_and_all_empty() {
    let (dict, corpus, _) = mini_corpus(3);
    let perfect: Vec<Vec<String>> = dict.samples.iter().map(|&(e, _)| dict.entries[e].acceptable[0].clone()).collect();
    let r = cter(&perfect, &corpus, &dict).unwrap();
    assert_eq!((r.instance_cter(), r.aggregate_cter()), (0.0, 0.0));
    let empty = vec![Vec::<String>::new(); dict.samples.len()];
    let r = cter(&empty, &corpus, &dict).unwrap();
    assert_eq!((r.instance_cter(), r.aggregate_cter()), (1.0, 1.0));
}

#[test]
fn breakdown_rows_partition_the_samples() {
    for seed in 0..20 {
        let (dict, corpus, hyps) = mini_corpus(seed);
        let r = cter(&hyps, &corpus, &dict).unwrap();
        for dim in ["pattern", "compound_len", "context_len", "has_mod"] {
            let rows: Vec<_> = r.rows(dim).collect();
            assert_eq!(rows.iter().map(|x| x.samples).sum::<usize>(), r.samples, "{dim}");
            assert_eq!(rows.iter().map(|x| x.sample_errors).sum::<usize>(), r.sample_errors, "{dim}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn aggregate_dominates_instance(seed in any::<u64>()) {
        let (dict, corpus, hyps) = mini_corpus(seed);
        let r = cter(&hyps, &corpus, &dict).unwrap();
        prop_assert!(r.aggregate_cter() >= r.instance_cter());
        prop_assert!((0.0..=1.0).contains(&r.instance_cter()) && (0.0..=1.0).contains(&r.aggregate_cter()));
    }

    #[test]
    fn content_outside_the_match_is_irrelevant(seed in any::<u64>(), pre in 0usize..4, post in 0usize..4) {
        let (dict, corpus, _) = mini_corpus(seed);
        let hyps: Vec<Vec<String>> = dict
            .samples
            .iter()
            .map(|&(e, _)| {
                let mut h = vec!["zz".to_string(); pre];
                h.extend(dict.entries[e].acceptable[0].iter().cloned());
                h.extend(std::iter::repeat_n("qq".to_string(), post));
                h
            })
            .collect();
        prop_assert_eq!(cter(&hyps, &corpus, &dict).unwrap().instance_cter(), 0.0);
    }

    #[test]
    fn bleu_is_permutation_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sent = |rng: &mut ChaCha8Rng| -> Vec<u8> { (0..rng.gen_range(1..8)).map(|_| rng.gen_range(0..4)).collect() };
        let n = rng.gen_range(1..6);
        let hyps: Vec<Vec<u8>> = (0..n).map(|_| sent(&mut rng)).collect();
        let refs: Vec<Vec<u8>> = (0..n).map(|_| sent(&mut rng)).collect();
        let a = bleu_with(&hyps, &refs, true).unwrap();
        let (mut h2, mut r2) = (hyps.clone(), refs.clone());
        h2.reverse();
        r2.reverse();
        prop_assert!((a - bleu_with(&h2, &r2, true).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn bleu_of_a_reference_prefix_is_the_brevity_penalty(len in 4usize..12, extra in 0usize..6) {
        let reference: Vec<usize> = (0..len + extra).collect();
        let hyp = reference[..len].to_vec();
        let expected = 100.0 * if extra == 0 { 1.0 } else { (1.0 - (len + extra) as f64 / len as f64).exp() };
        prop_assert!((bleu(&[hyp], &[reference]).unwrap() - expected).abs() < 1e-9);
    }
}

fn single(h: &str, r: &str, smooth: bool) -> f64 {
    bleu_with(&[w(h)], &[w(r)], smooth).unwrap()
}

fn geo(p: [f64; 4]) -> f64 {
    100.0 * (p[0] * p[1] * p[2] * p[3]).powf(0.25)
}

#[test]
fn bleu_hand_computed_pairs() {
    let cases: Vec<(f64, f64)> = vec![
        // identity
        (single("a b c d", "a b c d", false), 100.0),
        // partial overlap: 4/6, 3/5, 2/4, 1/3
        (single("a b c d e f", "a b c d x y", false), geo([4.0 / 6.0, 3.0 / 5.0, 2.0 / 4.0, 1.0 / 3.0])),
        // short prefix: precisions 1, brevity exp(1 - 6/4)
        (single("a b c d", "a b c d e f", false), 100.0 * (-0.5f64).exp()),
        // disjoint
        (single("x y z w", "a b c d", false), 0.0),
        // repeated token: unsmoothed zero bigram precision
        (single("the the the the the the the", "the cat is on the mat", false), 0.0),
        // same, add-one: 2/7, 1/7, 1/6, 1/5
        (
            single("the the the the the the the", "the cat is on the mat", true),
            geo([2.0 / 7.0, 1.0 / 7.0, 1.0 / 6.0, 1.0 / 5.0]),
        ),
        // clipping: 4/5, 3/4, 2/3, 1/2
        (single("a b a b a", "a b a b", false), geo([4.0 / 5.0, 3.0 / 4.0, 2.0 / 3.0, 1.0 / 2.0])),
        // two-sentence corpus: 7/8, 4/6, 2/4, 1/2
        (
            bleu(&[w("a b c d"), w("e f g h")], &[w("a b c d"), w("e f x h")]).unwrap(),
            geo([7.0 / 8.0, 4.0 / 6.0, 2.0 / 4.0, 1.0 / 2.0]),
        ),
        // reversed order, add-one: 5/5, 1/5, 1/4, 1/3
        (single("a b c d e", "e d c b a", true), geo([1.0, 1.0 / 5.0, 1.0 / 4.0, 1.0 / 3.0])),
        // brevity only: exp(1 - 8/5)
        (single("a b c d e", "a b c d e f g h", false), 100.0 * (1.0f64 - 8.0 / 5.0).exp()),
    ];
    for (i, (got, want)) in cases.iter().enumerate() {
        assert!((got - want).abs() < 1e-6, "pair {i}: {got} vs {want}");
    }
    assert_eq!(bleu(&[Vec::<String>::new()], &[w("a b")]).unwrap(), 0.0);
}
