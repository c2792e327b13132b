//! Small self-contained worlds: a corpus, an n-gram prior trained on it and
//! a few test sentences. The bundled world encodes the kicked/licked
//! plausibility relations with an eight-word vocabulary.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{words_of, Vocabulary};
use crate::noise::{ActionPrior, NoiseConfig, NoiseError, NoiseModel};
use crate::prior::{NGramModel, PriorError, SmoothingConfig};

#[derive(Debug, Error)]
pub enum ToyError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid toy world: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

const BUNDLED: &str = include_str!("../../../data/toy/world.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusLine {
    pub sentence: String,
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySentence {
    pub id: String,
    pub item: String,
    pub condition: String,
    pub sentence: String,
    pub critical_index: usize,
    pub predicate_index: usize,
}

impl ToySentence {
    pub fn words(&self) -> Vec<String> {
        words_of(&self.sentence)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyWorld {
    pub name: String,
    pub order: usize,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub action_prior: ActionPrior,
    pub corpus: Vec<CorpusLine>,
    pub items: Vec<ToySentence>,
}

/// Everything needed to run inference in a toy world.
pub struct ToyModels {
    pub vocab: Arc<Vocabulary>,
    pub prior: NGramModel,
    pub noise: NoiseModel,
}

impl ToyWorld {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED).expect("bundled toy world is valid")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn load(path: &Path) -> Result<Self, ToyError> {
        let s = std::fs::read_to_string(path)?;
        Ok(Self::from_json(&s)?)
    }

    /// Tokenized corpus with every line repeated `count` times.
    pub fn sentences(&self) -> Vec<Vec<String>> {
        self.corpus
            .iter()
            .flat_map(|l| std::iter::repeat_n(words_of(&l.sentence), l.count))
            .collect()
    }

    /// Vocabulary with corpus word counts as frequencies.
    pub fn vocabulary(&self) -> Vocabulary {
        let mut counts = std::collections::BTreeMap::<String, u64>::new();
        for s in self.sentences() {
            for w in s {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        Vocabulary::from_counts(counts, format!("toy:{}", self.name)).expect("toy corpus is non-empty")
    }

    pub fn build(&self) -> Result<ToyModels, ToyError> {
        let vocab = Arc::new(self.vocabulary());
        let prior = NGramModel::train(&self.sentences(), vocab.clone(), self.order, &self.smoothing)?;
        let noise = NoiseModel::new(vocab.clone(), self.noise.clone(), self.action_prior)?;
        Ok(ToyModels { vocab, prior, noise })
    }

    pub fn items_in(&self, condition: &str) -> impl Iterator<Item = &ToySentence> {
        let c = condition.to_string();
        self.items.iter().filter(move |s| s.condition == c)
    }
}
