//! Compound translation error rates, corpus BLEU, and CSV reports.

mod bleu;
mod cter;
mod report;

pub use bleu::{bleu, bleu_with};
pub use cter::{context_bucket, cter, BreakdownRow, CterReport};
pub use report::{breakdown_csv, summary_csv, write_reports, EvalReport, BREAKDOWN_FILE, SUMMARY_FILE};

/// True when `needle` occurs contiguously in `haystack`. An empty needle
/// never matches.
pub fn contains_ngram<T: PartialEq>(haystack: &[T], needle: &[T]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}
