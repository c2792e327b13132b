//! Language-model prior over intended word sequences.
//!
//! A [`PriorModel`] returns next-word log-probabilities over the restricted
//! vocabulary plus one end-of-sentence outcome. The end outcome always sits
//! at index `vocabulary().len()`, so a distribution vector has `|V| + 1`
//! entries.

mod ngram;
mod remote;
mod table;

pub use ngram::{NGramModel, SmoothingConfig};
pub use remote::RemotePrior;
pub use table::TablePrior;

use thiserror::Error;

use crate::lexicon::{Vocabulary, WordId};
use crate::service::ServiceError;

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("training error: {0}")]
    Training(String),
    #[error("word {0:?} is not in the vocabulary")]
    UnknownWord(String),
    #[error("backend error: {0}")]
    Backend(#[from] ServiceError),
    #[error("backend protocol error: {0}")]
    Protocol(String),
    #[error("invalid model file: {0}")]
    Format(String),
}

/// Next-word distribution over a fixed vocabulary.
pub trait PriorModel: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    /// Number of preceding words the model conditions on, or `None` for
    /// unbounded context.
    fn context_window(&self) -> Option<usize>;

    /// Log-probabilities of every word (and the end marker, last) after
    /// `prefix`.
    fn next_logprobs(&self, prefix: &[WordId]) -> Result<Vec<f64>, PriorError>;

    /// Log-probability of one outcome; `next == end_id()` scores the end marker.
    fn logprob(&self, prefix: &[WordId], next: WordId) -> Result<f64, PriorError> {
        Ok(self.next_logprobs(prefix)?[next as usize])
    }

    /// Log-probabilities of several outcomes after the same prefix.
    fn logprobs_for(&self, prefix: &[WordId], next: &[WordId]) -> Result<Vec<f64>, PriorError> {
        next.iter().map(|w| self.logprob(prefix, *w)).collect()
    }

    /// Context-free log-probability of a vocabulary word.
    fn unigram_logprob(&self, word: WordId) -> Result<f64, PriorError>;

    fn end_id(&self) -> WordId {
        self.vocabulary().len() as WordId
    }
}

/// Chain-rule log-probability of a complete sentence, end marker included.
pub fn sequence_logprob(m: &dyn PriorModel, words: &[WordId]) -> Result<f64, PriorError> {
    let mut total = 0.0;
    for t in 0..words.len() {
        total += m.logprob(&words[..t], words[t])?;
    }
    total += m.logprob(words, m.end_id())?;
    Ok(total)
}

/// Maps words to ids, failing on the first out-of-vocabulary word.
pub fn word_ids(v: &Vocabulary, words: &[String]) -> Result<Vec<WordId>, PriorError> {
    words
        .iter()
        .map(|w| v.id(w).ok_or_else(|| PriorError::UnknownWord(w.clone())))
        .collect()
}

/// Unigram log-probability of a word given as text.
pub fn unigram_logprob_of(m: &dyn PriorModel, word: &str) -> Result<f64, PriorError> {
    let id = m
        .vocabulary()
        .id(word)
        .ok_or_else(|| PriorError::UnknownWord(word.to_string()))?;
    m.unigram_logprob(id)
}

/// The `m` vocabulary words with the highest unigram probability; ties break
/// lexicographically.
pub fn top_unigram_words(m: &dyn PriorModel, top_m: usize) -> Result<Vec<WordId>, PriorError> {
    let mut scored = m
        .vocabulary()
        .ids()
        .map(|id| Ok((id, m.unigram_logprob(id)?)))
        .collect::<Result<Vec<_>, PriorError>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(top_m);
    let mut ids: Vec<WordId> = scored.into_iter().map(|(id, _)| id).collect();
    ids.sort_unstable();
    Ok(ids)
}
