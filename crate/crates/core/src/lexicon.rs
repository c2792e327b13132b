//! Vocabulary, word frequencies, orthographic neighbours and morphological
//! variants.
//!
//! Every comparison happens on lowercased forms. A [`Vocabulary`] is an
//! immutable, lexicographically ordered word set; word ids are indices into
//! that order, so two vocabularies built from the same words agree on ids.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a word inside a [`Vocabulary`].
pub type WordId = u32;

/// Minimum shared-prefix length for two words to count as morphological variants.
pub const DEFAULT_MIN_STEM: usize = 4;

/// Fraction of the shorter word the shared prefix must cover.
pub const STEM_RATIO: f64 = 0.6;

const TRAILING_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', '"', ')'];

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{path}:{line}: malformed frequency row: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary is empty")]
    Empty,
    #[error("invalid vocabulary json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Options for reading a frequency list.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FreqLoadOptions {
    /// Zero-based column (after the word) holding the frequency value. Column
    /// 0 is the raw count in a `word<TAB>count` file; SUBTLEX-style exports
    /// can point this at a per-million column instead.
    pub value_column: usize,
    /// Keep only the `n` most frequent rows before taking the union with the
    /// extra words.
    pub top_n: Option<usize>,
}


/// A restricted vocabulary with word frequencies.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    freq: Vec<u64>,
    index: HashMap<String, WordId>,
    source_tag: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct VocabEntry {
    word: String,
    freq: u64,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.words == other.words && self.freq == other.freq
    }
}

impl Vocabulary {
    /// Builds a vocabulary from `(word, count)` pairs. Words are lowercased;
    /// duplicate forms have their counts summed.
    pub fn from_counts<I, S>(counts: I, source_tag: impl Into<String>) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: AsRef<str>,
    {
        let mut merged: BTreeMap<String, u64> = BTreeMap::new();
        for (w, c) in counts {
            let w = normalize(w.as_ref());
            if w.is_empty() {
                continue;
            }
            *merged.entry(w).or_insert(0) += c;
        }
        if merged.is_empty() {
            return Err(LexiconError::Empty);
        }
        let (words, freq): (Vec<_>, Vec<_>) = merged.into_iter().unzip();
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as WordId))
            .collect();
        Ok(Self {
            words,
            freq,
            index,
            source_tag: source_tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.words[id as usize]
    }

    pub fn freq(&self, id: WordId) -> u64 {
        self.freq[id as usize]
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    /// Looks up a word (case-insensitive).
    pub fn id(&self, word: &str) -> Option<WordId> {
        match self.index.get(word) {
            Some(id) => Some(*id),
            None => self.index.get(&normalize(word)).copied(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.id(word).is_some()
    }

    pub fn ids(&self) -> impl Iterator<Item = WordId> {
        0..self.words.len() as WordId
    }

    pub fn total_freq(&self) -> u64 {
        self.freq.iter().sum()
    }

    pub fn to_json(&self) -> String {
        let entries: Vec<VocabEntry> = self
            .words
            .iter()
            .zip(&self.freq)
            .map(|(w, f)| VocabEntry {
                word: w.clone(),
                freq: *f,
            })
            .collect();
        serde_json::to_string_pretty(&entries).expect("vocabulary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, LexiconError> {
        let entries: Vec<VocabEntry> = serde_json::from_str(s)?;
        Self::from_counts(entries.into_iter().map(|e| (e.word, e.freq)), "json")
    }
}

pub fn normalize(word: &str) -> String {
    word.trim().to_lowercase()
}

/// Reads a frequency list and unions it with `extra_words`.
///
/// Extra words missing from the list get count 1. Blank lines and lines
/// starting with `#` are skipped.
pub fn build_vocabulary(
    freq_file: &Path,
    extra_words: &[String],
    opts: FreqLoadOptions,
) -> Result<Vocabulary, LexiconError> {
    let path = freq_file.display().to_string();
    let text = fs::read_to_string(freq_file).map_err(|source| LexiconError::Io {
        path: path.clone(),
        source,
    })?;
    let rows = parse_freq_rows(&text, &path, opts.value_column)?;
    union_with_extras(rows, extra_words, opts.top_n, &path)
}

fn union_with_extras(
    mut rows: Vec<(String, u64)>,
    extra_words: &[String],
    top_n: Option<usize>,
    tag: &str,
) -> Result<Vocabulary, LexiconError> {
    if let Some(n) = top_n {
        // Stable: ties keep file order.
        rows.sort_by_key(|r| std::cmp::Reverse(r.1));
        rows.truncate(n);
    }
    let mut merged: BTreeMap<String, u64> = BTreeMap::new();
    for (w, c) in rows {
        *merged.entry(normalize(&w)).or_insert(0) += c;
    }
    for w in extra_words {
        let w = normalize(w);
        if !w.is_empty() {
            merged.entry(w).or_insert(1);
        }
    }
    Vocabulary::from_counts(merged, tag)
}

fn parse_freq_rows(
    text: &str,
    path: &str,
    value_column: usize,
) -> Result<Vec<(String, u64)>, LexiconError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split('\t');
        let word = fields.next().unwrap_or("").trim();
        if word.is_empty() {
            return Err(LexiconError::Parse {
                path: path.to_string(),
                line: line_no,
                reason: "empty word".into(),
            });
        }
        let raw = fields.nth(value_column).ok_or_else(|| LexiconError::Parse {
            path: path.to_string(),
            line: line_no,
            reason: format!("missing frequency column {value_column}"),
        })?;
        let value: f64 = raw.trim().parse().map_err(|_| LexiconError::Parse {
            path: path.to_string(),
            line: line_no,
            reason: format!("frequency {raw:?} is not a number"),
        })?;
        if !value.is_finite() || value < 0.0 {
            return Err(LexiconError::Parse {
                path: path.to_string(),
                line: line_no,
                reason: format!("frequency {raw:?} is negative or not finite"),
            });
        }
        rows.push((word.to_string(), value.round() as u64));
    }
    Ok(rows)
}

/// Builds a vocabulary from in-memory `(word, count)` rows, with the same
/// union semantics as [`build_vocabulary`].
pub fn vocabulary_from_rows(
    rows: Vec<(String, u64)>,
    extra_words: &[String],
    top_n: Option<usize>,
) -> Result<Vocabulary, LexiconError> {
    union_with_extras(rows, extra_words, top_n, "rows")
}

/// Unit-cost Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}

/// All vocabulary words `u != w` within `max_distance` edits of `w`, sorted
/// by distance then lexicographically. `w` need not be in the vocabulary.
pub fn neighbors(v: &Vocabulary, w: &str, max_distance: usize) -> Vec<(WordId, usize)> {
    let w = normalize(w);
    let wlen = w.chars().count();
    let mut out: Vec<(WordId, usize)> = v
        .ids()
        .filter_map(|id| {
            let u = v.word(id);
            if u == w || u.chars().count().abs_diff(wlen) > max_distance {
                return None;
            }
            let d = edit_distance(u, &w);
            (d <= max_distance).then_some((id, d))
        })
        .collect();
    // ids are already lexicographic, so a stable sort on distance suffices
    out.sort_by_key(|&(_, d)| d);
    out
}

/// Precomputed neighbour lists for every vocabulary word.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    max_distance: usize,
    table: Vec<Vec<(WordId, usize)>>,
}

impl NeighborIndex {
    pub fn build(v: &Vocabulary, max_distance: usize) -> Self {
        let table = v
            .ids()
            .map(|id| neighbors(v, v.word(id), max_distance))
            .collect();
        Self {
            max_distance,
            table,
        }
    }

    pub fn max_distance(&self) -> usize {
        self.max_distance
    }

    pub fn get(&self, id: WordId) -> &[(WordId, usize)] {
        &self.table[id as usize]
    }

    /// Neighbours within `d <= max_distance`, falling back to a scan for
    /// out-of-vocabulary tokens.
    pub fn lookup(&self, v: &Vocabulary, w: &str, d: usize) -> Vec<(WordId, usize)> {
        match v.id(w) {
            Some(id) if d <= self.max_distance => self.table[id as usize]
                .iter()
                .copied()
                .filter(|&(_, dist)| dist <= d)
                .collect(),
            _ => neighbors(v, w, d),
        }
    }
}

fn common_prefix_len(a: &str, b: &str) -> usize {
    a.chars().zip(b.chars()).take_while(|(x, y)| x == y).count()
}

/// Two forms are morphological variants when they share a prefix of at least
/// `min_stem` characters covering at least 60% of the shorter form.
pub fn is_morph_variant(a: &str, b: &str, min_stem: usize) -> bool {
    if a == b {
        return false;
    }
    let shorter = a.chars().count().min(b.chars().count());
    let lcp = common_prefix_len(a, b);
    lcp >= min_stem && (lcp as f64) >= STEM_RATIO * shorter as f64
}

/// Vocabulary words that are morphological variants of `w`, excluding `w`.
pub fn morph_variants(v: &Vocabulary, w: &str, min_stem: usize) -> Vec<WordId> {
    let w = normalize(w);
    if w.chars().count() < min_stem {
        return Vec::new();
    }
    v.ids()
        .filter(|&id| is_morph_variant(&w, v.word(id), min_stem))
        .collect()
}

/// A whitespace token split into its model-facing word and trailing
/// punctuation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub word: String,
    pub punct: String,
}

pub fn tokenize(sentence: &str) -> Vec<Token> {
    sentence
        .split_whitespace()
        .filter_map(|surface| {
            let core = surface.trim_end_matches(TRAILING_PUNCT);
            let punct = &surface[core.len()..];
            if core.is_empty() {
                return None;
            }
            Some(Token {
                surface: surface.to_string(),
                word: normalize(core),
                punct: punct.to_string(),
            })
        })
        .collect()
}

/// Model-facing word sequence of a sentence.
pub fn words_of(sentence: &str) -> Vec<String> {
    tokenize(sentence).into_iter().map(|t| t.word).collect()
}
