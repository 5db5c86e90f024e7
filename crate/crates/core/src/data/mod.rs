//! Synthetic benchmark generation, vocabularies, corpus files, and batching.

mod batch;
mod corpus;
mod generator;
mod vocab;

pub use batch::{batchify, Batch, Padded};
pub use corpus::{ParallelCorpus, Split, TextCorpus};
pub use generator::{
    find_compound, generate_benchmark, reference_translate, Benchmark, BenchmarkSizes, Compound, CompoundDictionary,
    CompoundEntry, CompoundSpan, GenerationRules, Pattern,
};
pub use vocab::{is_punctuation, Vocabulary, BOS, EOS, PAD, UNK};
