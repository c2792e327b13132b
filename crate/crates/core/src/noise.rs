//! Generative error model.
//!
//! Each intended word is transmitted under one of four actions. `Normal`
//! copies the word. `FormSub` emits an orthographic neighbour: vocabulary
//! words within `max_form_distance` edits, weighted `exp(-lambda * d)`, plus
//! one lumped class for non-words one edit away whose mass is shared evenly
//! by every such string over `a-z`. `MorphSub` emits a morphological variant
//! uniformly. `SemSub` emits any other vocabulary word in proportion to its
//! frequency.

use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{
    edit_distance, morph_variants, neighbors, normalize, NeighborIndex, Vocabulary, WordId,
    DEFAULT_MIN_STEM,
};

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("noise configuration error: {0}")]
    Config(String),
    #[error("action {action:?} cannot be applied to {word:?}")]
    Infeasible { word: String, action: Action },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Normal,
    FormSub,
    MorphSub,
    SemSub,
}

impl Action {
    pub const ALL: [Action; 4] = [
        Action::Normal,
        Action::FormSub,
        Action::MorphSub,
        Action::SemSub,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_error(self) -> bool {
        self != Action::Normal
    }
}

/// Dirichlet-style pseudo-counts for the action prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionPrior {
    pub normal_alpha: f64,
    pub error_alpha: f64,
}

impl Default for ActionPrior {
    fn default() -> Self {
        Self {
            normal_alpha: 3.0,
            error_alpha: 1.0,
        }
    }
}

/// Action probabilities indexed by [`Action::index`]: each action's alpha
/// over the total, with every error action receiving `error_alpha`.
pub fn action_probs(p: &ActionPrior) -> Result<[f64; 4], NoiseError> {
    if !(p.normal_alpha > 0.0 && p.error_alpha > 0.0)
        || !p.normal_alpha.is_finite()
        || !p.error_alpha.is_finite()
    {
        return Err(NoiseError::Config(format!(
            "alphas must be positive and finite (normal {}, error {})",
            p.normal_alpha, p.error_alpha
        )));
    }
    let total = p.normal_alpha + 3.0 * p.error_alpha;
    let e = p.error_alpha / total;
    Ok([p.normal_alpha / total, e, e, e])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub lambda_form: f64,
    pub max_form_distance: usize,
    pub min_stem: usize,
    /// Pseudo-count added to every word's frequency in the semantic
    /// substitution distribution.
    pub semantic_floor: f64,
    /// Actions the channel may use; disabled actions get prior mass 0 and the
    /// rest are renormalized.
    pub enabled_actions: Vec<Action>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            lambda_form: 1.0,
            max_form_distance: 2,
            min_stem: DEFAULT_MIN_STEM,
            semantic_floor: 0.0,
            enabled_actions: Action::ALL.to_vec(),
        }
    }
}

impl NoiseConfig {
    /// Configuration with every error action switched off.
    pub fn noise_off() -> Self {
        Self {
            enabled_actions: vec![Action::Normal],
            ..Self::default()
        }
    }
}

/// One feasible explanation of an observed token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub word: WordId,
    pub action: Action,
    pub log_emission: f64,
}

#[derive(Debug, Clone, Copy)]
struct FormNorm {
    log_z: f64,
    nonword_count: usize,
}

/// Error model bound to a vocabulary.
#[derive(Debug)]
pub struct NoiseModel {
    vocab: Arc<Vocabulary>,
    cfg: NoiseConfig,
    log_action: [f64; 4],
    neighbors: NeighborIndex,
    morph: Vec<Vec<WordId>>,
    form_norm: Vec<OnceLock<FormNorm>>,
    sem_weight: Vec<f64>,
    sem_total: f64,
}

/// Every distinct string one edit (insert, delete, substitute over `a-z`)
/// away from `w`, excluding `w`.
pub fn single_edits(w: &str) -> BTreeSet<String> {
    const ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz";
    let chars: Vec<char> = w.chars().collect();
    let mut out = BTreeSet::new();
    for i in 0..chars.len() {
        let mut del = chars.clone();
        del.remove(i);
        out.insert(del.iter().collect());
        for c in ALPHABET.chars() {
            if c != chars[i] {
                let mut sub = chars.clone();
                sub[i] = c;
                out.insert(sub.iter().collect());
            }
        }
    }
    for i in 0..=chars.len() {
        for c in ALPHABET.chars() {
            let mut ins = chars.clone();
            ins.insert(i, c);
            out.insert(ins.iter().collect());
        }
    }
    out.remove(w);
    out
}

/// True when `observed` is one edit from `intended` and any introduced
/// character is in `a-z`.
fn is_single_edit_over_alphabet(intended: &str, observed: &str) -> bool {
    if edit_distance(intended, observed) != 1 {
        return false;
    }
    let a: Vec<char> = intended.chars().collect();
    let b: Vec<char> = observed.chars().collect();
    if b.len() < a.len() {
        return true;
    }
    let i = a
        .iter()
        .zip(&b)
        .position(|(x, y)| x != y)
        .unwrap_or(a.len().min(b.len()));
    b[i].is_ascii_lowercase()
}

impl NoiseModel {
    pub fn new(
        vocab: Arc<Vocabulary>,
        cfg: NoiseConfig,
        prior: ActionPrior,
    ) -> Result<Self, NoiseError> {
        if !(cfg.lambda_form > 0.0 && cfg.lambda_form.is_finite()) {
            return Err(NoiseError::Config(format!(
                "lambda_form must be positive, got {}",
                cfg.lambda_form
            )));
        }
        if cfg.max_form_distance < 1 {
            return Err(NoiseError::Config("max_form_distance must be >= 1".into()));
        }
        if !(cfg.semantic_floor >= 0.0 && cfg.semantic_floor.is_finite()) {
            return Err(NoiseError::Config("semantic_floor must be >= 0".into()));
        }
        if !cfg.enabled_actions.contains(&Action::Normal) {
            return Err(NoiseError::Config("the Normal action cannot be disabled".into()));
        }
        let probs = action_probs(&prior)?;
        let enabled_mass: f64 = Action::ALL
            .iter()
            .filter(|a| cfg.enabled_actions.contains(a))
            .map(|a| probs[a.index()])
            .sum();
        let mut log_action = [f64::NEG_INFINITY; 4];
        for a in Action::ALL {
            if cfg.enabled_actions.contains(&a) {
                log_action[a.index()] = (probs[a.index()] / enabled_mass).ln();
            }
        }
        if cfg.enabled_actions == [Action::Normal] {
            log_action[Action::Normal.index()] = 0.0;
        }
        let neighbors = NeighborIndex::build(&vocab, cfg.max_form_distance);
        let morph = vocab
            .ids()
            .map(|id| morph_variants(&vocab, vocab.word(id), cfg.min_stem))
            .collect();
        let sem_weight: Vec<f64> = vocab
            .ids()
            .map(|id| vocab.freq(id) as f64 + cfg.semantic_floor)
            .collect();
        let sem_total = sem_weight.iter().sum();
        let form_norm = (0..vocab.len()).map(|_| OnceLock::new()).collect();
        Ok(Self {
            vocab,
            cfg,
            log_action,
            neighbors,
            morph,
            form_norm,
            sem_weight,
            sem_total,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &NoiseConfig {
        &self.cfg
    }

    pub fn is_enabled(&self, a: Action) -> bool {
        self.log_action[a.index()] > f64::NEG_INFINITY
    }

    /// Log prior probability of an action after disabling.
    pub fn log_action_prob(&self, a: Action) -> f64 {
        self.log_action[a.index()]
    }

    pub fn morph_of(&self, id: WordId) -> &[WordId] {
        &self.morph[id as usize]
    }

    /// Vocabulary neighbours of an intended word within `max_form_distance`.
    pub fn form_neighbors(&self, id: WordId) -> &[(WordId, usize)] {
        self.neighbors.get(id)
    }

    fn form_norm(&self, id: WordId) -> FormNorm {
        *self.form_norm[id as usize].get_or_init(|| {
            let word = self.vocab.word(id);
            let nonword_count = single_edits(word)
                .iter()
                .filter(|s| !self.vocab.contains(s))
                .count();
            let lambda = self.cfg.lambda_form;
            let mut z: f64 = self
                .neighbors
                .get(id)
                .iter()
                .map(|&(_, d)| (-lambda * d as f64).exp())
                .sum();
            if nonword_count > 0 {
                z += (-lambda).exp();
            }
            FormNorm {
                log_z: if z > 0.0 { z.ln() } else { f64::NEG_INFINITY },
                nonword_count,
            }
        })
    }

    /// Non-words reachable from `intended` by one edit, sorted.
    pub fn nonword_edits(&self, intended: WordId) -> Vec<String> {
        single_edits(self.vocab.word(intended))
            .into_iter()
            .filter(|s| !self.vocab.contains(s))
            .collect()
    }

    /// `ln P(observed | intended, action)`; `-inf` marks an impossible emission.
    pub fn emission_logprob(&self, intended: WordId, observed: &str, a: Action) -> f64 {
        let obs = normalize(observed);
        let x = self.vocab.word(intended);
        let obs_id = self.vocab.id(&obs);
        match a {
            Action::Normal => {
                if obs == x {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Action::FormSub => {
                if obs == x {
                    return f64::NEG_INFINITY;
                }
                let norm = self.form_norm(intended);
                let lambda = self.cfg.lambda_form;
                match obs_id {
                    Some(_) => {
                        let d = edit_distance(x, &obs);
                        if d <= self.cfg.max_form_distance {
                            -lambda * d as f64 - norm.log_z
                        } else {
                            f64::NEG_INFINITY
                        }
                    }
                    None => {
                        if norm.nonword_count > 0 && is_single_edit_over_alphabet(x, &obs) {
                            -lambda - norm.log_z - (norm.nonword_count as f64).ln()
                        } else {
                            f64::NEG_INFINITY
                        }
                    }
                }
            }
            Action::MorphSub => match obs_id {
                Some(o) => {
                    let variants = &self.morph[intended as usize];
                    if variants.binary_search(&o).is_ok() {
                        -(variants.len() as f64).ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                }
                None => f64::NEG_INFINITY,
            },
            Action::SemSub => match obs_id {
                Some(o) if o != intended => {
                    let denom = self.sem_total - self.sem_weight[intended as usize];
                    let w = self.sem_weight[o as usize];
                    if w > 0.0 && denom > 0.0 {
                        (w / denom).ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                }
                _ => f64::NEG_INFINITY,
            },
        }
    }

    /// Draws an observed token for `intended` under action `a`.
    pub fn sample_emission<R: Rng + ?Sized>(
        &self,
        intended: WordId,
        a: Action,
        rng: &mut R,
    ) -> Result<String, NoiseError> {
        let x = self.vocab.word(intended);
        let infeasible = || NoiseError::Infeasible {
            word: x.to_string(),
            action: a,
        };
        match a {
            Action::Normal => Ok(x.to_string()),
            Action::FormSub => {
                let norm = self.form_norm(intended);
                if norm.log_z == f64::NEG_INFINITY {
                    return Err(infeasible());
                }
                let lambda = self.cfg.lambda_form;
                let mut u = rng.gen::<f64>() * norm.log_z.exp();
                for &(id, d) in self.neighbors.get(intended) {
                    let w = (-lambda * d as f64).exp();
                    if u < w {
                        return Ok(self.vocab.word(id).to_string());
                    }
                    u -= w;
                }
                let nonwords = self.nonword_edits(intended);
                if nonwords.is_empty() {
                    // rounding left u just past the last neighbour
                    let last = self.neighbors.get(intended).last().ok_or_else(infeasible)?;
                    return Ok(self.vocab.word(last.0).to_string());
                }
                Ok(nonwords[rng.gen_range(0..nonwords.len())].clone())
            }
            Action::MorphSub => {
                let variants = &self.morph[intended as usize];
                if variants.is_empty() {
                    return Err(infeasible());
                }
                Ok(self.vocab.word(variants[rng.gen_range(0..variants.len())]).to_string())
            }
            Action::SemSub => {
                let denom = self.sem_total - self.sem_weight[intended as usize];
                if denom <= 0.0 {
                    return Err(infeasible());
                }
                let mut u = rng.gen::<f64>() * denom;
                let mut last = None;
                for id in self.vocab.ids().filter(|&id| id != intended) {
                    let w = self.sem_weight[id as usize];
                    if w <= 0.0 {
                        continue;
                    }
                    last = Some(id);
                    if u < w {
                        return Ok(self.vocab.word(id).to_string());
                    }
                    u -= w;
                }
                last.map(|id| self.vocab.word(id).to_string())
                    .ok_or_else(infeasible)
            }
        }
    }

    /// Intended words and actions that can explain `observed`, sorted by
    /// (word, action). Semantic substitutions are only proposed from
    /// `sem_pool`.
    pub fn candidate_intendeds(&self, observed: &str, sem_pool: &[WordId]) -> Vec<Candidate> {
        let obs = normalize(observed);
        let obs_id = self.vocab.id(&obs);
        let mut out = Vec::new();
        let mut push = |word: WordId, action: Action| {
            if !self.is_enabled(action) {
                return;
            }
            let log_emission = self.emission_logprob(word, &obs, action);
            if log_emission > f64::NEG_INFINITY {
                out.push(Candidate {
                    word,
                    action,
                    log_emission,
                });
            }
        };
        match obs_id {
            Some(o) => {
                push(o, Action::Normal);
                for &(x, _) in self.neighbors.get(o) {
                    push(x, Action::FormSub);
                }
                // the variant relation is symmetric
                for &x in &self.morph[o as usize] {
                    push(x, Action::MorphSub);
                }
                for &x in sem_pool {
                    if x != o {
                        push(x, Action::SemSub);
                    }
                }
            }
            None => {
                for (x, _) in neighbors(&self.vocab, &obs, 1) {
                    push(x, Action::FormSub);
                }
            }
        }
        out.sort_by(|a, b| a.word.cmp(&b.word).then(a.action.cmp(&b.action)));
        out
    }
}
