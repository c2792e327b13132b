use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{PriorError, PriorModel};
use crate::lexicon::{Vocabulary, WordId};

const BOS: WordId = WordId::MAX - 1;
const NONE: WordId = WordId::MAX;
const BOS_TEXT: &str = "<s>";
const END_TEXT: &str = "</s>";
const MAX_ORDER: usize = 4;

type Key = [WordId; MAX_ORDER - 1];

/// Additive smoothing with fixed interpolation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub delta: f64,
    /// Interpolation weights, lowest order first. `None` selects the default
    /// for the model order.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            weights: None,
        }
    }
}

fn default_weights(order: usize) -> Vec<f64> {
    match order {
        1 => vec![1.0],
        2 => vec![0.3, 0.7],
        3 => vec![0.1, 0.2, 0.7],
        _ => vec![0.05, 0.05, 0.2, 0.7],
    }
}

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    total: u64,
    next: HashMap<WordId, u64>,
}

/// Interpolated additive-delta n-gram model (order 1 to 4).
///
/// Each order contributes `(c(h, w) + delta) / (c(h) + delta * (|V| + 1))`;
/// an order whose context was never observed defers to the next lower one.
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    delta: f64,
    weights: Vec<f64>,
    vocab: Arc<Vocabulary>,
    counts: Vec<HashMap<Key, ContextCounts>>,
    prompt: Vec<WordId>,
}

fn key_of(hist: &[WordId], len: usize) -> Key {
    let mut key = [NONE; MAX_ORDER - 1];
    key[..len].copy_from_slice(&hist[hist.len() - len..]);
    key
}

impl NGramModel {
    pub fn train<S: AsRef<str>>(
        corpus: &[Vec<S>],
        vocab: Arc<Vocabulary>,
        order: usize,
        smoothing: &SmoothingConfig,
    ) -> Result<Self, PriorError> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(PriorError::Training(format!(
                "order {order} outside 1..={MAX_ORDER}"
            )));
        }
        if corpus.iter().all(|s| s.is_empty()) {
            return Err(PriorError::Training("empty corpus".into()));
        }
        let weights = smoothing
            .weights
            .clone()
            .unwrap_or_else(|| default_weights(order));
        validate_weights(&weights, order)?;
        if !(smoothing.delta >= 0.0 && smoothing.delta.is_finite()) {
            return Err(PriorError::Training(format!(
                "delta {} must be finite and non-negative",
                smoothing.delta
            )));
        }
        let mut model = Self {
            order,
            delta: smoothing.delta,
            weights,
            counts: vec![HashMap::new(); order],
            prompt: Vec::new(),
            vocab,
        };
        let end = model.end_id();
        for sentence in corpus {
            let mut seq = vec![BOS; order - 1];
            for w in sentence {
                let w = w.as_ref();
                let id = model
                    .vocab
                    .id(w)
                    .ok_or_else(|| PriorError::UnknownWord(w.to_string()))?;
                seq.push(id);
            }
            seq.push(end);
            for i in (order - 1)..seq.len() {
                model.observe(&seq[..i], seq[i]);
            }
        }
        model.check_unigram_floor()?;
        Ok(model)
    }

    fn observe(&mut self, hist: &[WordId], target: WordId) {
        for n in 1..=self.order {
            let ctx = self.counts[n - 1].entry(key_of(hist, n - 1)).or_default();
            ctx.total += 1;
            *ctx.next.entry(target).or_insert(0) += 1;
        }
    }

    fn check_unigram_floor(&self) -> Result<(), PriorError> {
        if self.delta > 0.0 {
            return Ok(());
        }
        let uni = &self.counts[0][&[NONE; MAX_ORDER - 1]];
        for id in 0..=self.vocab.len() as WordId {
            if !uni.next.contains_key(&id) {
                let word = if id == self.end_id() {
                    END_TEXT.to_string()
                } else {
                    self.vocab.word(id).to_string()
                };
                return Err(PriorError::Training(format!(
                    "delta = 0 leaves {word:?} with zero unigram probability"
                )));
            }
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn vocab_arc(&self) -> Arc<Vocabulary> {
        Arc::clone(&self.vocab)
    }

    /// Sets a fixed word prefix placed between the begin markers and the
    /// sentence whenever the model is queried.
    pub fn with_prompt(mut self, prompt: &[String]) -> Result<Self, PriorError> {
        self.prompt = super::word_ids(&self.vocab, prompt)?;
        Ok(self)
    }

    fn outcomes(&self) -> f64 {
        (self.vocab.len() + 1) as f64
    }

    fn history(&self, prefix: &[WordId]) -> Vec<WordId> {
        let mut h = vec![BOS; self.order - 1];
        h.extend_from_slice(&self.prompt);
        h.extend_from_slice(prefix);
        h
    }

    /// Resolved context for each order, after back-off of unseen contexts.
    fn contexts<'a>(&'a self, hist: &[WordId]) -> Vec<&'a ContextCounts> {
        let mut resolved: Vec<&ContextCounts> = Vec::with_capacity(self.order);
        for n in 1..=self.order {
            let ctx = self.counts[n - 1]
                .get(&key_of(hist, n - 1))
                .filter(|c| c.total > 0);
            match ctx {
                Some(c) => resolved.push(c),
                None => {
                    let lower = resolved[n - 2];
                    resolved.push(lower);
                }
            }
        }
        resolved
    }

    fn prob_with(&self, ctxs: &[&ContextCounts], w: WordId) -> f64 {
        let denom_extra = self.delta * self.outcomes();
        ctxs.iter()
            .zip(&self.weights)
            .map(|(ctx, lambda)| {
                if *lambda == 0.0 {
                    return 0.0;
                }
                let c = ctx.next.get(&w).copied().unwrap_or(0) as f64;
                lambda * (c + self.delta) / (ctx.total as f64 + denom_extra)
            })
            .sum()
    }

    /// Probability of `w` after `prefix`.
    pub fn prob(&self, prefix: &[WordId], w: WordId) -> f64 {
        let hist = self.history(prefix);
        self.prob_with(&self.contexts(&hist), w)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("model serializes")
    }

    fn token_text(&self, id: WordId) -> String {
        match id {
            BOS => BOS_TEXT.to_string(),
            id if id == self.end_id() => END_TEXT.to_string(),
            id => self.vocab.word(id).to_string(),
        }
    }

    fn to_file(&self) -> NGramFile {
        let mut entries = Vec::new();
        for (n, table) in self.counts.iter().enumerate() {
            let mut keys: Vec<&Key> = table.keys().collect();
            keys.sort();
            for key in keys {
                let ctx = &table[key];
                let mut next: Vec<(String, u64)> = ctx
                    .next
                    .iter()
                    .map(|(id, c)| (self.token_text(*id), *c))
                    .collect();
                next.sort();
                entries.push(CountEntry {
                    context: key[..n].iter().map(|id| self.token_text(*id)).collect(),
                    next,
                });
            }
        }
        NGramFile {
            order: self.order,
            smoothing: SmoothingConfig {
                delta: self.delta,
                weights: Some(self.weights.clone()),
            },
            vocabulary: serde_json::from_str(&self.vocab.to_json()).expect("vocab json"),
            prompt: self.prompt.iter().map(|id| self.token_text(*id)).collect(),
            counts: entries,
        }
    }

    pub fn from_json(s: &str) -> Result<Self, PriorError> {
        let file: NGramFile =
            serde_json::from_str(s).map_err(|e| PriorError::Format(e.to_string()))?;
        let vocab = Vocabulary::from_json(&file.vocabulary.to_string())
            .map_err(|e| PriorError::Format(e.to_string()))?;
        let vocab = Arc::new(vocab);
        let weights = file.smoothing.weights.clone().unwrap_or_else(|| default_weights(file.order));
        validate_weights(&weights, file.order)?;
        let mut model = Self {
            order: file.order,
            delta: file.smoothing.delta,
            weights,
            counts: vec![HashMap::new(); file.order],
            prompt: Vec::new(),
            vocab,
        };
        let end = model.end_id();
        let resolve = |t: &str| -> Result<WordId, PriorError> {
            match t {
                BOS_TEXT => Ok(BOS),
                END_TEXT => Ok(end),
                w => model
                    .vocab
                    .id(w)
                    .ok_or_else(|| PriorError::Format(format!("unknown token {w:?}"))),
            }
        };
        let mut counts = vec![HashMap::new(); file.order];
        for entry in &file.counts {
            let n = entry.context.len() + 1;
            if n > file.order {
                return Err(PriorError::Format(format!(
                    "context {:?} longer than order {}",
                    entry.context, file.order
                )));
            }
            let hist = entry
                .context
                .iter()
                .map(|t| resolve(t))
                .collect::<Result<Vec<_>, _>>()?;
            let mut ctx = ContextCounts::default();
            for (t, c) in &entry.next {
                ctx.next.insert(resolve(t)?, *c);
                ctx.total += c;
            }
            counts[n - 1].insert(key_of(&hist, n - 1), ctx);
        }
        model.counts = counts;
        if !model.counts[0].contains_key(&[NONE; MAX_ORDER - 1]) {
            return Err(PriorError::Format("missing unigram counts".into()));
        }
        let prompt: Vec<String> = file.prompt.clone();
        model.prompt = super::word_ids(&model.vocab, &prompt)
            .map_err(|e| PriorError::Format(e.to_string()))?;
        model.check_unigram_floor()?;
        Ok(model)
    }
}

fn validate_weights(weights: &[f64], order: usize) -> Result<(), PriorError> {
    if weights.len() != order {
        return Err(PriorError::Training(format!(
            "{} interpolation weights for order {order}",
            weights.len()
        )));
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(0.0..=1.0).contains(w)) || (sum - 1.0).abs() > 1e-9 {
        return Err(PriorError::Training(format!(
            "interpolation weights {weights:?} must lie in [0,1] and sum to 1"
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CountEntry {
    context: Vec<String>,
    next: Vec<(String, u64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NGramFile {
    order: usize,
    smoothing: SmoothingConfig,
    vocabulary: serde_json::Value,
    #[serde(default)]
    prompt: Vec<String>,
    counts: Vec<CountEntry>,
}

impl PriorModel for NGramModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn context_window(&self) -> Option<usize> {
        Some(self.order - 1)
    }

    fn next_logprobs(&self, prefix: &[WordId]) -> Result<Vec<f64>, PriorError> {
        let hist = self.history(prefix);
        let ctxs = self.contexts(&hist);
        Ok((0..=self.vocab.len() as WordId)
            .map(|w| self.prob_with(&ctxs, w).ln())
            .collect())
    }

    fn logprob(&self, prefix: &[WordId], next: WordId) -> Result<f64, PriorError> {
        Ok(self.prob(prefix, next).ln())
    }

    fn logprobs_for(&self, prefix: &[WordId], next: &[WordId]) -> Result<Vec<f64>, PriorError> {
        let hist = self.history(prefix);
        let ctxs = self.contexts(&hist);
        Ok(next.iter().map(|w| self.prob_with(&ctxs, *w).ln()).collect())
    }

    fn unigram_logprob(&self, word: WordId) -> Result<f64, PriorError> {
        if word as usize >= self.vocab.len() {
            return Err(PriorError::UnknownWord(format!("id {word}")));
        }
        // Renormalized over words only: the end marker is not a word.
        let uni = &self.counts[0][&[NONE; MAX_ORDER - 1]];
        let c = uni.next.get(&word).copied().unwrap_or(0) as f64;
        let ends = uni.next.get(&self.end_id()).copied().unwrap_or(0);
        let words_total = (uni.total - ends) as f64;
        Ok(((c + self.delta) / (words_total + self.delta * self.vocab.len() as f64)).ln())
    }
}
