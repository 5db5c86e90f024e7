//! Synthetic compositional translation benchmark.
//!
//! Source sentences are a context template with one compound slot. Compounds
//! are built from atoms: `DET ADJ N` (NP), `V DET ADJ N` (VP), `P DET ADJ N`
//! (PP), each optionally followed by a postpositive MOD clause. The target
//! language is a bijective word lexicon plus two reordering rules: adjectives
//! follow nouns, and a MOD clause moves in front of its noun phrase followed by
//! a relative marker.
//!
//! (ADJ, N) pairs are split into seen and held-out sets. Training data uses
//! only seen pairs; the cg-test split places novel compounds built from
//! held-out pairs into contexts taken from training.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::{Split, TextCorpus};
use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pattern {
    Np,
    Vp,
    Pp,
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Pattern::Np, Pattern::Vp, Pattern::Pp];
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pattern::Np => "NP",
            Pattern::Vp => "VP",
            Pattern::Pp => "PP",
        })
    }
}

impl FromStr for Pattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NP" => Ok(Pattern::Np),
            "VP" => Ok(Pattern::Vp),
            "PP" => Ok(Pattern::Pp),
            _ => Err(Error::config(format!("unknown pattern `{s}`"))),
        }
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Atom inventories, context vocabulary, and the translation rule table.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRules {
    pub determiners: Vec<String>,
    pub adjectives: Vec<String>,
    pub nouns: Vec<String>,
    pub verbs: Vec<String>,
    pub prepositions: Vec<String>,
    /// Postpositive modifier clauses, each a short token sequence.
    pub mod_clauses: Vec<Vec<String>>,
    /// Context words; disjoint from every atom inventory.
    pub filler: Vec<String>,
    pub punctuation: Vec<String>,
    /// Relative-clause marker placed after a fronted MOD clause in the target.
    pub mod_marker: String,
    pub templates_per_pattern: usize,
    pub prefix_len: (usize, usize),
    pub suffix_len: (usize, usize),
    /// Adjectives each noun is paired with in training.
    pub seen_adjectives_per_noun: usize,
    /// Probability that a training compound uses its noun's primary adjective;
    /// 0 samples seen pairs uniformly.
    pub primary_pair_rate: f64,
    pub mod_rate: f64,
}

impl Default for GenerationRules {
    fn default() -> Self {
        Self {
            determiners: words("the a this every my his her our"),
            adjectives: words(
                "small large red blue old new big tiny green yellow dirty clean cheap expensive heavy light dark bright short tall",
            ),
            nouns: words(
                "car chair dog cat house book table phone bike boat lamp hat cup box bag desk bed door window plane train shirt shoe ball key clock pen bottle chef doctor",
            ),
            verbs: words("saw bought liked found took sold painted washed moved carried"),
            prepositions: words("on under near behind beside above inside with"),
            mod_clauses: ["he owned", "she wanted", "they lost", "we made", "he kept", "she needed", "they fixed", "we loved"]
                .iter()
                .map(|s| words(s))
                .collect(),
            filler: words(
                "i you john mary said think know see believe heard looked was is very nice here there today yesterday again and but then so at noon in morning it seems fine just also really quickly slowly left came arrived stayed home please good great maybe still",
            ),
            punctuation: words(". ,"),
            mod_marker: "de".into(),
            templates_per_pattern: 60,
            prefix_len: (1, 4),
            suffix_len: (1, 3),
            seen_adjectives_per_noun: 2,
            primary_pair_rate: 0.88,
            mod_rate: 0.3,
        }
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn pseudo_word(i: usize) -> String {
    let n = CONSONANTS.len() * VOWELS.len();
    let idx = (i * 37 + 11) % (n * n);
    let syl = |s: usize| {
        let c = CONSONANTS[s / VOWELS.len()] as char;
        let v = VOWELS[s % VOWELS.len()] as char;
        format!("{c}{v}")
    };
    format!("{}{}", syl(idx % n), syl(idx / n))
}

impl GenerationRules {
    /// Every source word in a fixed category order.
    pub fn source_words(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for list in [&self.determiners, &self.adjectives, &self.nouns, &self.verbs, &self.prepositions] {
            out.extend(list.iter().map(String::as_str));
        }
        out.extend(self.mod_clauses.iter().flatten().map(String::as_str));
        out.extend(self.filler.iter().map(String::as_str));
        let mut seen = HashSet::new();
        out.retain(|w| seen.insert(*w));
        out.extend(self.punctuation.iter().map(String::as_str));
        out
    }

    /// Bijective source-to-target word map. Punctuation maps to itself.
    pub fn lexicon(&self) -> BTreeMap<String, String> {
        let mut lex = BTreeMap::new();
        let mut k = 0;
        for w in self.source_words() {
            let t = if self.punctuation.iter().any(|p| p == w) {
                w.to_string()
            } else {
                k += 1;
                pseudo_word(k - 1)
            };
            lex.insert(w.to_string(), t);
        }
        lex
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let clause_words: Vec<&String> = self.mod_clauses.iter().flatten().collect();
        let atoms = [
            &self.determiners,
            &self.adjectives,
            &self.nouns,
            &self.verbs,
            &self.prepositions,
            &self.filler,
            &self.punctuation,
        ];
        for w in atoms.iter().flat_map(|l| l.iter()) {
            if !seen.insert(w.as_str()) {
                return Err(Error::config(format!("token `{w}` appears in more than one category")));
            }
        }
        for w in clause_words {
            if seen.contains(w.as_str()) {
                return Err(Error::config(format!("clause token `{w}` collides with another category")));
            }
        }
        if [&self.determiners, &self.adjectives, &self.nouns, &self.verbs, &self.prepositions, &self.filler]
            .iter()
            .any(|l| l.is_empty())
            || self.mod_clauses.is_empty()
        {
            return Err(Error::config("every atom inventory must be non-empty"));
        }
        let lex = self.lexicon();
        let targets: HashSet<&String> = lex.values().collect();
        if targets.len() != lex.len() || targets.contains(&self.mod_marker) {
            return Err(Error::config("lexicon is not bijective"));
        }
        if !(0.0..=1.0).contains(&self.primary_pair_rate) || !(0.0..=1.0).contains(&self.mod_rate) {
            return Err(Error::config("rates must lie in [0, 1]"));
        }
        if self.prefix_len.0 > self.prefix_len.1 || self.suffix_len.0 > self.suffix_len.1 {
            return Err(Error::config("template length ranges are inverted"));
        }
        Ok(())
    }

    /// `key=value` echo of the rule table.
    pub fn to_kv(&self, seed: u64) -> String {
        let mut out = format!("seed={seed}\n");
        let j = |l: &[String]| l.join(",");
        out += &format!("determiners={}\n", j(&self.determiners));
        out += &format!("adjectives={}\n", j(&self.adjectives));
        out += &format!("nouns={}\n", j(&self.nouns));
        out += &format!("verbs={}\n", j(&self.verbs));
        out += &format!("prepositions={}\n", j(&self.prepositions));
        let clauses: Vec<String> = self.mod_clauses.iter().map(|c| c.join(" ")).collect();
        out += &format!("mod_clauses={}\n", clauses.join(","));
        out += &format!("filler={}\n", j(&self.filler));
        out += &format!("punctuation={}\n", j(&self.punctuation));
        out += &format!("mod_marker={}\n", self.mod_marker);
        out += &format!("templates_per_pattern={}\n", self.templates_per_pattern);
        out += &format!("prefix_len={},{}\n", self.prefix_len.0, self.prefix_len.1);
        out += &format!("suffix_len={},{}\n", self.suffix_len.0, self.suffix_len.1);
        out += &format!("seen_adjectives_per_noun={}\n", self.seen_adjectives_per_noun);
        out += &format!("primary_pair_rate={}\n", self.primary_pair_rate);
        out += &format!("mod_rate={}\n", self.mod_rate);
        out += "reorder.np=DET ADJ N -> DET N ADJ\n";
        out += "reorder.mod=NP MOD -> MOD marker NP\n";
        for (s, t) in self.lexicon() {
            out += &format!("lex.{s}={t}\n");
        }
        out
    }
}

/// A composition of atoms under one pattern.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Compound {
    pub pattern: Pattern,
    /// Verb (VP) or preposition (PP).
    pub head: Option<String>,
    pub det: String,
    pub adj: String,
    pub noun: String,
    pub modifier: Option<Vec<String>>,
}

impl Compound {
    pub fn source(&self) -> Vec<String> {
        let mut out = Vec::new();
        out.extend(self.head.clone());
        out.extend([self.det.clone(), self.adj.clone(), self.noun.clone()]);
        if let Some(m) = &self.modifier {
            out.extend(m.iter().cloned());
        }
        out
    }

    /// Target rendering under the rule table.
    pub fn translate(&self, rules: &GenerationRules, lex: &BTreeMap<String, String>) -> Result<Vec<String>> {
        let tr = |w: &String| lex.get(w).cloned().ok_or_else(|| Error::config(format!("`{w}` is not in the lexicon")));
        let mut out = Vec::new();
        if let Some(h) = &self.head {
            out.push(tr(h)?);
        }
        if let Some(m) = &self.modifier {
            for w in m {
                out.push(tr(w)?);
            }
            out.push(rules.mod_marker.clone());
        }
        out.extend([tr(&self.det)?, tr(&self.noun)?, tr(&self.adj)?]);
        Ok(out)
    }
}

/// Location of the compound inside a source sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompoundSpan {
    pub start: usize,
    pub end: usize,
    pub compound: Compound,
}

/// Find the single `DET ADJ N` core and attach an adjacent head and MOD clause.
pub fn find_compound(tokens: &[String], rules: &GenerationRules) -> Option<CompoundSpan> {
    let has = |l: &[String], w: &String| l.contains(w);
    let i = (0..tokens.len().saturating_sub(2)).find(|&i| {
        has(&rules.determiners, &tokens[i])
            && has(&rules.adjectives, &tokens[i + 1])
            && has(&rules.nouns, &tokens[i + 2])
    })?;
    let (mut start, mut pattern, mut head) = (i, Pattern::Np, None);
    if i > 0 {
        let prev = &tokens[i - 1];
        if has(&rules.verbs, prev) {
            (start, pattern, head) = (i - 1, Pattern::Vp, Some(prev.clone()));
        } else if has(&rules.prepositions, prev) {
            (start, pattern, head) = (i - 1, Pattern::Pp, Some(prev.clone()));
        }
    }
    let mut end = i + 3;
    let modifier = rules.mod_clauses.iter().find(|c| tokens[end..].starts_with(c)).cloned();
    if let Some(m) = &modifier {
        end += m.len();
    }
    let compound = Compound {
        pattern,
        head,
        det: tokens[i].clone(),
        adj: tokens[i + 1].clone(),
        noun: tokens[i + 2].clone(),
        modifier,
    };
    Some(CompoundSpan { start, end, compound })
}

/// Rule-based reference translation: lexicon substitution in source order,
/// except the compound, which is rendered with its reordering rules.
pub fn reference_translate(tokens: &[String], rules: &GenerationRules) -> Result<Vec<String>> {
    reference_translate_with(tokens, rules, &rules.lexicon())
}

pub(crate) fn reference_translate_with(
    tokens: &[String],
    rules: &GenerationRules,
    lex: &BTreeMap<String, String>,
) -> Result<Vec<String>> {
    let tr = |w: &String| lex.get(w).cloned().ok_or_else(|| Error::config(format!("`{w}` is not in the lexicon")));
    let Some(span) = find_compound(tokens, rules) else {
        return tokens.iter().map(tr).collect();
    };
    let mut out = Vec::with_capacity(tokens.len() + 1);
    for w in &tokens[..span.start] {
        out.push(tr(w)?);
    }
    out.extend(span.compound.translate(rules, lex)?);
    for w in &tokens[span.end..] {
        out.push(tr(w)?);
    }
    Ok(out)
}

/// Acceptable target n-grams and metadata for one compound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompoundEntry {
    pub source: Vec<String>,
    pub acceptable: Vec<Vec<String>>,
    pub pattern: Pattern,
    pub has_mod: bool,
}

impl CompoundEntry {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }
}

/// Compound entries plus, per cg-test sentence, its compound and context index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CompoundDictionary {
    pub entries: Vec<CompoundEntry>,
    /// `(entry index, context index)` aligned with cg-test lines.
    pub samples: Vec<(usize, usize)>,
}

const NGRAM_SEP: &str = " ||| ";

impl CompoundDictionary {
    pub fn entry_for_sample(&self, i: usize) -> &CompoundEntry {
        &self.entries[self.samples[i].0]
    }

    /// One row per cg-test sentence:
    /// `compound TAB acceptable-n-grams TAB pattern TAB has_mod TAB context_index`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for &(e, ctx) in &self.samples {
            let entry = &self.entries[e];
            let acc: Vec<String> = entry.acceptable.iter().map(|a| a.join(" ")).collect();
            out += &format!(
                "{}\t{}\t{}\t{}\t{}\n",
                entry.source.join(" "),
                acc.join(NGRAM_SEP),
                entry.pattern,
                u8::from(entry.has_mod),
                ctx
            );
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut dict = Self::default();
        let mut index: HashMap<String, usize> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |reason: &str| Error::Malformed { line: i + 1, reason: reason.into() };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 tab-separated fields"));
            }
            let acceptable: Vec<Vec<String>> = f[1].split(NGRAM_SEP).map(words).filter(|a| !a.is_empty()).collect();
            if acceptable.is_empty() {
                return Err(bad("compound has no acceptable translation"));
            }
            let pattern: Pattern = f[2].parse().map_err(|_| bad("bad pattern"))?;
            let has_mod = match f[3] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("has_mod must be 0 or 1")),
            };
            let ctx: usize = f[4].parse().map_err(|_| bad("bad context index"))?;
            let e = *index.entry(f[0].to_string()).or_insert_with(|| {
                dict.entries.push(CompoundEntry { source: words(f[0]), acceptable, pattern, has_mod });
                dict.entries.len() - 1
            });
            dict.samples.push((e, ctx));
        }
        Ok(dict)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_tsv(&fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchmarkSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub cg_compounds: usize,
    pub contexts_per_compound: usize,
}

impl Default for BenchmarkSizes {
    fn default() -> Self {
        Self { train: 8000, dev: 500, test: 500, cg_compounds: 200, contexts_per_compound: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub train: TextCorpus,
    pub dev: TextCorpus,
    pub test: TextCorpus,
    pub cg_test: TextCorpus,
    pub dictionary: CompoundDictionary,
    /// `(adjective index, noun index)` pairs allowed in training.
    pub seen_pairs: BTreeSet<(usize, usize)>,
    pub held_out_pairs: BTreeSet<(usize, usize)>,
}

impl Benchmark {
    pub fn corpus(&self, split: Split) -> &TextCorpus {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
            Split::CgTest => &self.cg_test,
        }
    }

    /// Write the split files, `compounds.tsv` and `rules.kv` into `dir`.
    pub fn write(&self, dir: &Path, rules: &GenerationRules, seed: u64) -> Result<()> {
        fs::create_dir_all(dir)?;
        for split in Split::ALL {
            self.corpus(split).save(&dir.join(split.file_name()))?;
        }
        write_atomic(&dir.join("compounds.tsv"), self.dictionary.to_tsv().as_bytes())?;
        write_atomic(&dir.join("rules.kv"), rules.to_kv(seed).as_bytes())
    }
}

struct Template {
    prefix: Vec<String>,
    suffix: Vec<String>,
}

impl Template {
    fn fill(&self, compound: &[String]) -> Vec<String> {
        [&self.prefix[..], compound, &self.suffix[..]].concat()
    }
}

struct Sampler<'a> {
    rules: &'a GenerationRules,
    rng: ChaCha8Rng,
}

impl Sampler<'_> {
    fn pick<'b, T>(&mut self, xs: &'b [T]) -> &'b T {
        &xs[self.rng.gen_range(0..xs.len())]
    }

    fn compound(&mut self, pattern: Pattern, adj: usize, noun: usize) -> Compound {
        let r = self.rules;
        let head = match pattern {
            Pattern::Np => None,
            Pattern::Vp => Some(self.pick(&r.verbs).clone()),
            Pattern::Pp => Some(self.pick(&r.prepositions).clone()),
        };
        let modifier = self.rng.gen_bool(r.mod_rate).then(|| self.pick(&r.mod_clauses).clone());
        Compound {
            pattern,
            head,
            det: self.pick(&r.determiners).clone(),
            adj: r.adjectives[adj].clone(),
            noun: r.nouns[noun].clone(),
            modifier,
        }
    }

    fn templates(&mut self) -> Vec<Template> {
        let r = self.rules;
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let mut attempts = 0;
        while out.len() < r.templates_per_pattern && attempts < 100 * r.templates_per_pattern.max(1) {
            attempts += 1;
            let np = self.rng.gen_range(r.prefix_len.0..=r.prefix_len.1);
            let ns = self.rng.gen_range(r.suffix_len.0..=r.suffix_len.1);
            let prefix: Vec<String> = (0..np).map(|_| self.pick(&r.filler).clone()).collect();
            let mut suffix: Vec<String> = (0..ns).map(|_| self.pick(&r.filler).clone()).collect();
            suffix.push(r.punctuation[0].clone());
            if seen.insert((prefix.clone(), suffix.clone())) {
                out.push(Template { prefix, suffix });
            }
        }
        out
    }
}

/// Generate all splits and the compound dictionary. Deterministic in `seed`.
pub fn generate_benchmark(rules: &GenerationRules, sizes: &BenchmarkSizes, seed: u64) -> Result<Benchmark> {
    rules.validate()?;
    let (na, nn) = (rules.adjectives.len(), rules.nouns.len());
    let per_noun = rules.seen_adjectives_per_noun;
    if per_noun == 0 || per_noun >= na || per_noun * nn < na {
        return Err(Error::config(format!(
            "holdout infeasible: {per_noun} seen adjectives per noun with {na} adjectives and {nn} nouns"
        )));
    }
    if sizes.contexts_per_compound == 0 || sizes.contexts_per_compound > rules.templates_per_pattern {
        return Err(Error::config("contexts per compound must be in 1..=templates_per_pattern"));
    }
    let lex = rules.lexicon();
    let mut s = Sampler { rules, rng: ChaCha8Rng::seed_from_u64(seed) };

    // Seen pairs: noun j takes adjectives perm[(j*per_noun + r) % na], which
    // covers every adjective because per_noun * nn >= na.
    let mut perm: Vec<usize> = (0..na).collect();
    perm.shuffle(&mut s.rng);
    let noun_adjectives: Vec<Vec<usize>> =
        (0..nn).map(|noun| (0..per_noun).map(|r| perm[(noun * per_noun + r) % na]).collect()).collect();
    let seen_pairs: BTreeSet<(usize, usize)> =
        noun_adjectives.iter().enumerate().flat_map(|(n, adjs)| adjs.iter().map(move |&a| (a, n))).collect();
    let held_out_pairs: BTreeSet<(usize, usize)> =
        (0..na).flat_map(|a| (0..nn).map(move |n| (a, n))).filter(|p| !seen_pairs.contains(p)).collect();
    let seen_list: Vec<(usize, usize)> = seen_pairs.iter().copied().collect();

    let templates: BTreeMap<Pattern, Vec<Template>> = Pattern::ALL.iter().map(|&p| (p, s.templates())).collect();
    if templates.values().any(|t| t.len() < sizes.contexts_per_compound) {
        return Err(Error::config("filler vocabulary too small for the requested templates"));
    }

    let mut used_templates: BTreeMap<Pattern, BTreeSet<usize>> = BTreeMap::new();
    let mut train_tokens: HashSet<String> = HashSet::new();
    let mut in_distribution = |s: &mut Sampler, n: usize, split: Split, track: bool| -> Result<TextCorpus> {
        let mut pairs = Vec::with_capacity(n);
        for _ in 0..n {
            let pattern = *s.pick(&Pattern::ALL);
            let (a, nn_) = if rules.primary_pair_rate > 0.0 {
                let noun = s.rng.gen_range(0..nn);
                let adjs = &noun_adjectives[noun];
                if adjs.len() == 1 || s.rng.gen_bool(rules.primary_pair_rate) {
                    (adjs[0], noun)
                } else {
                    (adjs[s.rng.gen_range(1..adjs.len())], noun)
                }
            } else {
                *s.pick(&seen_list)
            };
            let c = s.compound(pattern, a, nn_);
            let ti = s.rng.gen_range(0..templates[&pattern].len());
            let src = templates[&pattern][ti].fill(&c.source());
            let tgt = reference_translate_with(&src, rules, &lex)?;
            if track {
                used_templates.entry(pattern).or_default().insert(ti);
                train_tokens.extend(src.iter().cloned());
            }
            pairs.push((src, tgt));
        }
        Ok(TextCorpus::new(split, pairs))
    };
    let train = in_distribution(&mut s, sizes.train, Split::Train, true)?;
    let dev = in_distribution(&mut s, sizes.dev, Split::Dev, false)?;
    let test = in_distribution(&mut s, sizes.test, Split::Test, false)?;

    // Novel compounds only use atoms observed in training.
    let in_train = |w: &String| train_tokens.contains(w);
    let usable: Vec<(usize, usize)> = held_out_pairs
        .iter()
        .copied()
        .filter(|&(a, n)| in_train(&rules.adjectives[a]) && in_train(&rules.nouns[n]))
        .collect();
    if usable.is_empty() && sizes.cg_compounds > 0 {
        return Err(Error::config("holdout infeasible: no held-out pair has both atoms in training"));
    }
    let mut dictionary = CompoundDictionary::default();
    let mut cg_pairs = Vec::new();
    let mut chosen: HashSet<Vec<String>> = HashSet::new();
    let mut attempts = 0usize;
    while dictionary.entries.len() < sizes.cg_compounds {
        attempts += 1;
        if attempts > 1000 * sizes.cg_compounds.max(1) {
            return Err(Error::config("holdout infeasible: cannot draw enough distinct novel compounds"));
        }
        let pattern = *s.pick(&Pattern::ALL);
        let &(a, n) = s.pick(&usable);
        let c = s.compound(pattern, a, n);
        let atoms_seen = c.source().iter().all(in_train);
        let mut pool: Vec<usize> =
            used_templates.get(&pattern).map(|t| t.iter().copied().collect()).unwrap_or_default();
        if !atoms_seen || pool.len() < sizes.contexts_per_compound || !chosen.insert(c.source()) {
            continue;
        }
        pool.shuffle(&mut s.rng);
        let entry = CompoundEntry {
            source: c.source(),
            acceptable: vec![c.translate(rules, &lex)?],
            pattern,
            has_mod: c.modifier.is_some(),
        };
        let e = dictionary.entries.len();
        dictionary.entries.push(entry);
        for (ctx, &ti) in pool.iter().take(sizes.contexts_per_compound).enumerate() {
            let src = templates[&pattern][ti].fill(&c.source());
            let tgt = reference_translate_with(&src, rules, &lex)?;
            cg_pairs.push((src, tgt));
            dictionary.samples.push((e, ctx));
        }
    }

    Ok(Benchmark {
        train,
        dev,
        test,
        cg_test: TextCorpus::new(Split::CgTest, cg_pairs),
        dictionary,
        seen_pairs,
        held_out_pairs,
    })
}
