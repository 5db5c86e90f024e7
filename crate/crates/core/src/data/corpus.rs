use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::vocab::Vocabulary;
use crate::checksum::Hasher;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
    CgTest,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Dev, Split::Test, Split::CgTest];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.tsv",
            Split::Dev => "dev.tsv",
            Split::Test => "test.tsv",
            Split::CgTest => "cg_test.tsv",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::CgTest => "cg-test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            "cg-test" | "cg_test" => Ok(Split::CgTest),
            _ => Err(Error::config(format!("unknown split `{s}`"))),
        }
    }
}

/// Tokenized sentence pairs as read from a corpus file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextCorpus {
    pub split: Split,
    pub pairs: Vec<(Vec<String>, Vec<String>)>,
}

impl TextCorpus {
    pub fn new(split: Split, pairs: Vec<(Vec<String>, Vec<String>)>) -> Self {
        Self { split, pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = impl Iterator<Item = &str>> {
        self.pairs.iter().map(|(s, _)| s.iter().map(String::as_str))
    }

    pub fn targets(&self) -> impl Iterator<Item = impl Iterator<Item = &str>> {
        self.pairs.iter().map(|(_, t)| t.iter().map(String::as_str))
    }

    /// `source TAB target` per line, tokens separated by single spaces.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (s, t) in &self.pairs {
            out.push_str(&s.join(" "));
            out.push('\t');
            out.push_str(&t.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse_tsv(split: Split, text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (s, t) = line
                .split_once('\t')
                .ok_or_else(|| Error::Malformed { line: i + 1, reason: "expected source<TAB>target".into() })?;
            let s: Vec<String> = s.split(' ').filter(|w| !w.is_empty()).map(str::to_string).collect();
            let t: Vec<String> = t.split(' ').filter(|w| !w.is_empty()).map(str::to_string).collect();
            if s.is_empty() || t.is_empty() || t.iter().any(|w| w.contains('\t')) {
                return Err(Error::Malformed { line: i + 1, reason: "empty or malformed side".into() });
            }
            pairs.push((s, t));
        }
        if pairs.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        Ok(Self { split, pairs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_tsv().as_bytes())
    }

    pub fn load(split: Split, path: &Path) -> Result<Self> {
        Self::parse_tsv(split, &fs::read_to_string(path)?)
    }

    pub fn checksum(&self) -> String {
        let mut h = Hasher::new();
        h.update(self.to_tsv().as_bytes());
        h.finish()
    }
}

/// Sentence pairs as id sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub split: Split,
    pub pairs: Vec<(Vec<u32>, Vec<u32>)>,
}

impl ParallelCorpus {
    pub fn encode(text: &TextCorpus, src: &Vocabulary, tgt: &Vocabulary) -> Self {
        let pairs = text
            .pairs
            .iter()
            .map(|(s, t)| (src.encode(s.iter().map(String::as_str)), tgt.encode(t.iter().map(String::as_str))))
            .collect();
        Self { split: text.split, pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn subset(&self, n: usize) -> Self {
        Self { split: self.split, pairs: self.pairs.iter().take(n).cloned().collect() }
    }

    /// Digest of the id sequences; identifies the exact training data.
    pub fn checksum(&self) -> String {
        let mut h = Hasher::new();
        for (s, t) in &self.pairs {
            for x in s.iter().chain([&u32::MAX]).chain(t).chain([&u32::MAX]) {
                h.update(&x.to_le_bytes());
            }
        }
        h.finish()
    }
}
