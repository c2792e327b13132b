use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{surprisal_trace, Ensemble, RejuvenationStats};
use crate::lexicon::{Vocabulary, WordId};
use crate::noise::Action;

pub const SCHEMA_VERSION: u32 = 1;

/// Per-sentence inference result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub schema_version: u32,
    pub sentence_id: String,
    pub words: Vec<String>,
    /// `"smc"` or `"exact"`.
    pub method: String,
    pub seed: Option<u64>,
    pub num_particles: Option<usize>,
    pub surprisal_trace: Vec<f64>,
    /// Rows follow [`Action::ALL`]: normal, form, morph, semantic.
    pub action_posterior: Vec<[f64; 4]>,
    pub error_probability: Vec<f64>,
    /// Intended sentence (space separated) to posterior mass.
    pub sentence_posterior: BTreeMap<String, f64>,
    pub rejuv_acceptance: Vec<f64>,
    pub rejuv_attempts: Vec<usize>,
    pub log_marginal_likelihood: f64,
    /// Word positions after which a conditional sweep ran.
    #[serde(default)]
    pub conditional_triggers: Vec<usize>,
}

impl PosteriorSummary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Sentence with the most posterior mass; ties go to the
    /// lexicographically smaller sentence.
    pub fn map_sentence(&self) -> Option<(&str, f64)> {
        self.sentence_posterior
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(s, p)| (s.as_str(), *p))
    }

    /// Flattens to one row per word.
    pub fn rows(&self) -> Vec<SummaryRow> {
        (0..self.words.len())
            .map(|t| {
                let a = self.action_posterior[t];
                SummaryRow {
                    sentence_id: self.sentence_id.clone(),
                    word_index: t,
                    word: self.words[t].clone(),
                    surprisal_bits: self.surprisal_trace[t],
                    p_normal: a[0],
                    p_form: a[1],
                    p_morph: a[2],
                    p_sem: a[3],
                    rejuv_acceptance: self.rejuv_acceptance.get(t).copied().unwrap_or(0.0),
                }
            })
            .collect()
    }
}

/// CSV row layout of a summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sentence_id: String,
    pub word_index: usize,
    pub word: String,
    pub surprisal_bits: f64,
    pub p_normal: f64,
    pub p_form: f64,
    pub p_morph: f64,
    pub p_sem: f64,
    pub rejuv_acceptance: f64,
}

/// Retains the `top_n` heaviest sentences (ties broken lexicographically).
pub(super) fn top_sentences(masses: HashMap<Vec<WordId>, f64>, v: &Vocabulary, top_n: Option<usize>) -> BTreeMap<String, f64> {
    let mut all: Vec<(String, f64)> = masses
        .into_iter()
        .map(|(ids, p)| {
            let s: Vec<&str> = ids.iter().map(|&i| v.word(i)).collect();
            // summed weights can round a hair above 1
            (s.join(" "), p.min(1.0))
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if let Some(n) = top_n {
        all.truncate(n);
    }
    all.into_iter().collect()
}

/// Posterior summary of a finished (or partially consumed) ensemble.
pub fn summarize(
    e: &Ensemble,
    stats: &RejuvenationStats,
    v: &Vocabulary,
    top_n: Option<usize>,
) -> PosteriorSummary {
    let t_len = e.observed.len();
    let w = e.normalized_weights();
    let mut action_posterior = vec![[0.0; 4]; t_len];
    let mut masses: HashMap<Vec<WordId>, f64> = HashMap::new();
    for (p, wi) in e.particles.iter().zip(&w) {
        for (t, a) in p.actions.iter().enumerate() {
            action_posterior[t][a.index()] += wi;
        }
        *masses.entry(p.intended.clone()).or_insert(0.0) += wi;
    }
    let error_probability = action_posterior
        .iter()
        .map(|r| (1.0 - r[Action::Normal.index()]).max(0.0))
        .collect();
    let mut rates = stats.rates();
    rates.resize(t_len, 0.0);
    let mut attempts = stats.attempted.clone();
    attempts.resize(t_len, 0);
    PosteriorSummary {
        schema_version: SCHEMA_VERSION,
        sentence_id: String::new(),
        words: e.observed.clone(),
        method: "smc".into(),
        seed: Some(e.seed),
        num_particles: Some(e.particles.len()),
        surprisal_trace: surprisal_trace(&e.history),
        action_posterior,
        error_probability,
        sentence_posterior: top_sentences(masses, v, top_n),
        rejuv_acceptance: rates,
        rejuv_attempts: attempts,
        log_marginal_likelihood: e.log_evidence,
        conditional_triggers: e.conditional_sweeps.clone(),
    }
}
