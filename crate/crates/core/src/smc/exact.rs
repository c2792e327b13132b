//! Exhaustive posterior by enumeration, used as a reference for the
//! particle filter on small worlds.

use std::collections::HashMap;

use super::summary::{top_sentences, PosteriorSummary, SCHEMA_VERSION};
use super::{Engine, SmcError};
use crate::lexicon::{normalize, WordId};
use crate::math::{log_add, logsumexp};
use crate::noise::{Action, Candidate, NoiseModel};
use crate::prior::PriorModel;

pub const DEFAULT_ENUMERATION_BUDGET: u64 = 1_000_000;

struct Acc<'a> {
    prior: &'a dyn PriorModel,
    noise: &'a NoiseModel,
    cands: &'a [Vec<Candidate>],
    /// log Z_t: joint mass of all length-t prefixes (t = 1..=T).
    prefix_mass: Vec<f64>,
    /// Per position and action, log mass of complete sentences.
    actions: Vec<[f64; 4]>,
    sentences: HashMap<Vec<WordId>, f64>,
    total: f64,
}

impl Acc<'_> {
    fn visit(
        &mut self,
        words: &mut Vec<WordId>,
        acts: &mut Vec<Action>,
        log_joint: f64,
    ) -> Result<(), SmcError> {
        let t = words.len();
        if t == self.cands.len() {
            let end = self.prior.logprob(words, self.prior.end_id())?;
            let full = log_joint + end;
            if full == f64::NEG_INFINITY {
                return Ok(());
            }
            self.total = log_add(self.total, full);
            for (i, a) in acts.iter().enumerate() {
                let cell = &mut self.actions[i][a.index()];
                *cell = log_add(*cell, full);
            }
            let m = self.sentences.entry(words.clone()).or_insert(f64::NEG_INFINITY);
            *m = log_add(*m, full);
            return Ok(());
        }
        let cs = &self.cands[t];
        let ids: Vec<WordId> = cs.iter().map(|c| c.word).collect();
        let lm = self.prior.logprobs_for(words, &ids)?;
        for (c, l) in cs.iter().zip(lm) {
            let next = log_joint + l + self.noise.log_action_prob(c.action) + c.log_emission;
            if next == f64::NEG_INFINITY {
                continue;
            }
            self.prefix_mass[t] = log_add(self.prefix_mass[t], next);
            words.push(c.word);
            acts.push(c.action);
            self.visit(words, acts, next)?;
            words.pop();
            acts.pop();
        }
        Ok(())
    }
}

/// Exact posterior over intended sentences and actions given explicit
/// candidate sets for every observed word.
///
/// Fails with [`SmcError::OracleBudget`] when the number of candidate paths
/// exceeds `budget`.
pub fn enumerate_exact(
    sentence_id: &str,
    words: &[String],
    prior: &dyn PriorModel,
    noise: &NoiseModel,
    candidates: &[Vec<Candidate>],
    budget: u64,
) -> Result<PosteriorSummary, SmcError> {
    if candidates.len() != words.len() {
        return Err(SmcError::Config("one candidate set per word required".into()));
    }
    if let Some(t) = candidates.iter().position(|c| c.is_empty()) {
        return Err(SmcError::Degenerate {
            position: t,
            word: words[t].clone(),
        });
    }
    let size: f64 = candidates.iter().map(|c| c.len() as f64).product();
    if size > budget as f64 {
        return Err(SmcError::OracleBudget {
            instance: sentence_id.to_string(),
            size,
            budget,
        });
    }
    let n = words.len();
    let mut acc = Acc {
        prior,
        noise,
        cands: candidates,
        prefix_mass: vec![f64::NEG_INFINITY; n],
        actions: vec![[f64::NEG_INFINITY; 4]; n],
        sentences: HashMap::new(),
        total: f64::NEG_INFINITY,
    };
    acc.visit(&mut Vec::with_capacity(n), &mut Vec::with_capacity(n), 0.0)?;

    let mut surprisal = Vec::with_capacity(n);
    let mut prev = 0.0;
    for (t, &z) in acc.prefix_mass.iter().enumerate() {
        if z == f64::NEG_INFINITY {
            return Err(SmcError::Degenerate {
                position: t,
                word: words[t].clone(),
            });
        }
        surprisal.push(-(z - prev) / std::f64::consts::LN_2);
        prev = z;
    }
    if acc.total == f64::NEG_INFINITY {
        return Err(SmcError::Degenerate {
            position: n,
            word: "</s>".into(),
        });
    }
    let total = acc.total;
    let action_posterior: Vec<[f64; 4]> = acc
        .actions
        .iter()
        .map(|row| {
            let z = logsumexp(row);
            row.map(|x| (x - z).exp())
        })
        .collect();
    let error_probability = action_posterior
        .iter()
        .map(|r| (1.0 - r[Action::Normal.index()]).max(0.0))
        .collect();
    let masses = acc
        .sentences
        .into_iter()
        .map(|(k, lw)| (k, (lw - total).exp()))
        .collect();
    Ok(PosteriorSummary {
        schema_version: SCHEMA_VERSION,
        sentence_id: sentence_id.to_string(),
        words: words.to_vec(),
        method: "exact".into(),
        seed: None,
        num_particles: None,
        surprisal_trace: surprisal,
        action_posterior,
        error_probability,
        sentence_posterior: top_sentences(masses, prior.vocabulary(), None),
        rejuv_acceptance: vec![0.0; n],
        rejuv_attempts: vec![0; n],
        log_marginal_likelihood: total,
        conditional_triggers: Vec::new(),
    })
}

impl Engine<'_> {
    /// Exact posterior using the same candidate sets the particle filter sees.
    pub fn exact(&self, sentence_id: &str, words: &[String], budget: u64) -> Result<PosteriorSummary, SmcError> {
        let words: Vec<String> = words.iter().map(|w| normalize(w)).collect();
        let cands: Vec<Vec<Candidate>> = words.iter().map(|w| self.candidates(w)).collect();
        enumerate_exact(sentence_id, &words, self.prior, self.noise, &cands, budget)
    }
}
