use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::checksum::short_hash;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

pub fn is_punctuation(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| c.is_ascii_punctuation())
}

/// Bijective token/id map with reserved ids 0..4 for PAD, BOS, EOS, UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    freq: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_entries(entries: impl IntoIterator<Item = (String, u64)>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut freq = vec![0; RESERVED.len()];
        for (t, f) in entries {
            tokens.push(t);
            freq.push(f);
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, freq, index }
    }

    /// Tokens with frequency `>= min_freq`, ordered by descending frequency then
    /// lexicographically. Rarer tokens encode to UNK.
    pub fn build<'a, I, S>(sentences: I, min_freq: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = &'a str>,
    {
        if min_freq < 1 {
            return Err(Error::config("min_freq must be >= 1"));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for s in sentences {
            for t in s {
                *counts.entry(t).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::Empty("vocabulary corpus"));
        }
        let mut entries: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|&(t, f)| f >= min_freq && !RESERVED.contains(&t))
            .map(|(t, f)| (t.to_string(), f))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_entries(entries))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn frequency(&self, id: u32) -> u64 {
        self.freq[id as usize]
    }

    pub fn is_special(id: u32) -> bool {
        id < RESERVED.len() as u32
    }

    pub fn is_punct(&self, id: u32) -> bool {
        !Self::is_special(id) && is_punctuation(self.token(id))
    }

    pub fn encode<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Vec<u32> {
        tokens.into_iter().map(|t| self.id(t)).collect()
    }

    /// Tokens for `ids`, stopping at the first EOS and dropping PAD/BOS.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token(i).to_string())
            .collect()
    }

    /// Stable digest of the id-to-token mapping.
    pub fn checksum(&self) -> String {
        short_hash(self.tokens.join("\n").as_bytes())
    }

    /// One `token TAB frequency` line per non-reserved id, in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (t, f) in self.tokens.iter().zip(&self.freq).skip(RESERVED.len()) {
            out.push_str(&format!("{t}\t{f}\n"));
        }
        crate::io::write_atomic(path, out.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (t, f) = line
                .split_once('\t')
                .ok_or_else(|| Error::Malformed { line: i + 1, reason: "expected token<TAB>freq".into() })?;
            let f = f.parse().map_err(|_| Error::Malformed { line: i + 1, reason: format!("bad frequency `{f}`") })?;
            entries.push((t.to_string(), f));
        }
        let v = Self::from_entries(entries);
        if v.index.len() != v.tokens.len() {
            return Err(Error::Malformed { line: 0, reason: "duplicate token".into() });
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(min_freq: u64) -> Vocabulary {
        let sents = [vec!["a", "b", "a", "."], vec!["c", "a", "b"]];
        Vocabulary::build(sents.iter().map(|s| s.iter().copied()), min_freq).unwrap()
    }

    #[test]
    fn reserved_ids_and_order() {
        let v = vocab(1);
        assert_eq!(v.token(PAD), "<pad>");
        assert_eq!(v.token(UNK), "<unk>");
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        assert!(v.is_punct(v.id(".")));
        assert!(!v.is_punct(v.id("a")));
    }

    #[test]
    fn min_freq_maps_singletons_to_unk() {
        let v = vocab(2);
        assert_eq!(v.encode(["a", "c", "."]), vec![4, UNK, UNK]);
        assert!(vocab(1).get("c").is_some());
        assert!(Vocabulary::build([["a"]], 0).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        let v = vocab(1);
        v.save(&p).unwrap();
        let w = Vocabulary::load(&p).unwrap();
        assert_eq!(v, w);
        assert_eq!(v.checksum(), w.checksum());
    }
}
