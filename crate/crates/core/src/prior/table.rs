use std::collections::HashMap;
use std::sync::Arc;

use super::{PriorError, PriorModel};
use crate::lexicon::{Vocabulary, WordId};

/// Lookup-table prior: explicit distributions for chosen contexts, a
/// default distribution everywhere else.
///
/// Contexts are matched on the last `window` words of the prefix. Used as a
/// stand-in backend in engine tests.
#[derive(Debug, Clone)]
pub struct TablePrior {
    vocab: Arc<Vocabulary>,
    window: usize,
    default: Vec<f64>,
    table: HashMap<Vec<WordId>, Vec<f64>>,
}

impl TablePrior {
    /// Starts from a uniform distribution over words and the end marker.
    pub fn uniform(vocab: Arc<Vocabulary>, window: usize) -> Self {
        let n = vocab.len() + 1;
        Self {
            default: vec![-(n as f64).ln(); n],
            vocab,
            window,
            table: HashMap::new(),
        }
    }

    /// Registers probabilities (not logs) for a context; they are normalized here.
    pub fn set(&mut self, context: &[WordId], probs: &[f64]) -> Result<(), PriorError> {
        if probs.len() != self.vocab.len() + 1 || context.len() > self.window {
            return Err(PriorError::Format("bad table row".into()));
        }
        let z: f64 = probs.iter().sum();
        if z.is_nan() || z <= 0.0 {
            return Err(PriorError::Format("table row has no mass".into()));
        }
        self.table
            .insert(context.to_vec(), probs.iter().map(|p| (p / z).ln()).collect());
        Ok(())
    }

    fn row(&self, prefix: &[WordId]) -> &[f64] {
        // most specific suffix wins
        let max = self.window.min(prefix.len());
        for len in (0..=max).rev() {
            if let Some(row) = self.table.get(&prefix[prefix.len() - len..]) {
                return row;
            }
        }
        &self.default
    }
}

impl PriorModel for TablePrior {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn context_window(&self) -> Option<usize> {
        Some(self.window)
    }

    fn next_logprobs(&self, prefix: &[WordId]) -> Result<Vec<f64>, PriorError> {
        Ok(self.row(prefix).to_vec())
    }

    fn logprob(&self, prefix: &[WordId], next: WordId) -> Result<f64, PriorError> {
        Ok(self.row(prefix)[next as usize])
    }

    fn unigram_logprob(&self, word: WordId) -> Result<f64, PriorError> {
        if word as usize >= self.vocab.len() {
            return Err(PriorError::UnknownWord(format!("id {word}")));
        }
        let words = &self.default[..self.vocab.len()];
        let z = crate::math::logsumexp(words);
        Ok(words[word as usize] - z)
    }
}
