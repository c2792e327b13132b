//! Metropolis-Hastings rejuvenation of earlier commitments.
//!
//! A move at position `s` draws a fresh `(x_s, a_s)` from the same local
//! proposal used during propagation, conditioned on the particle's words to
//! the left of `s`. Because that proposal already contains the left-context
//! LM term, the action prior and the emission, those factors cancel in the
//! Hastings ratio and only the LM terms to the right of `s` remain.

use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rng::{rejuv_stream, Stream};
use super::{sample_log, Engine, Ensemble, Particle, SmcError};
use crate::lexicon::WordId;
use crate::math::logsumexp;
use crate::noise::Candidate;

/// True iff the unigram-normalized surprisal exceeds `tau` (all in bits).
pub fn conditional_trigger(surprisal_bits: f64, unigram_surprisal_bits: f64, tau: f64) -> bool {
    surprisal_bits - unigram_surprisal_bits > tau
}

/// Per-position move counts, pooled over particles and iterations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejuvenationStats {
    pub accepted: Vec<usize>,
    pub attempted: Vec<usize>,
}

impl RejuvenationStats {
    pub fn new(len: usize) -> Self {
        Self {
            accepted: vec![0; len],
            attempted: vec![0; len],
        }
    }

    /// Acceptance rate per position; positions without attempts report 0.
    pub fn rates(&self) -> Vec<f64> {
        self.accepted
            .iter()
            .zip(&self.attempted)
            .map(|(&a, &n)| if n == 0 { 0.0 } else { a as f64 / n as f64 })
            .collect()
    }

    pub fn total_attempted(&self) -> usize {
        self.attempted.iter().sum()
    }

    pub fn total_accepted(&self) -> usize {
        self.accepted.iter().sum()
    }

    pub(super) fn absorb(&mut self, other: &RejuvenationStats) {
        if self.accepted.len() < other.accepted.len() {
            self.accepted.resize(other.accepted.len(), 0);
            self.attempted.resize(other.attempted.len(), 0);
        }
        for (i, (a, n)) in other.accepted.iter().zip(&other.attempted).enumerate() {
            self.accepted[i] += a;
            self.attempted[i] += n;
        }
    }
}

impl Engine<'_> {
    /// Runs the configured number of full-sentence sweeps after the last word.
    pub fn second_pass_rejuvenate(&self, e: &mut Ensemble) -> Result<RejuvenationStats, SmcError> {
        if !e.finished {
            return Err(SmcError::Config(
                "second-pass rejuvenation needs a finished ensemble".into(),
            ));
        }
        let t = e.observed.len();
        let mut stats = RejuvenationStats::new(t);
        for iter in 0..self.cfg.second_pass_rejuv_iters {
            let s = self.sweep(e, 0..t, true, Stream::SecondPass, iter as u64)?;
            stats.absorb(&s);
        }
        Ok(stats)
    }

    /// One left-to-right sweep over `positions`. The target is the joint of
    /// all consumed words, with the end marker when `include_end` is set.
    pub(super) fn sweep(
        &self,
        e: &mut Ensemble,
        positions: Range<usize>,
        include_end: bool,
        stream: Stream,
        pass: u64,
    ) -> Result<RejuvenationStats, SmcError> {
        let len = e.observed.len();
        let mut stats = RejuvenationStats::new(len);
        let p_attempt = self.cfg.second_pass_rejuv_p;
        for s in positions {
            let cands = e.candidates[s].clone();
            let observed = e.observed[s].as_str();
            let seed = e.seed;
            let outcomes: Vec<Option<bool>> = e
                .particles
                .par_iter_mut()
                .enumerate()
                .map(|(i, p)| {
                    let mut rng = rejuv_stream(seed, stream, pass, s as u64, i as u64);
                    if !rng.gen_bool(p_attempt) {
                        return Ok(None);
                    }
                    self.mh_move(p, s, &cands, observed, include_end, &mut rng)
                        .map(Some)
                })
                .collect::<Result<_, SmcError>>()?;
            for o in outcomes.into_iter().flatten() {
                stats.attempted[s] += 1;
                stats.accepted[s] += o as usize;
            }
        }
        Ok(stats)
    }

    fn mh_move<R: Rng>(
        &self,
        p: &mut Particle,
        s: usize,
        cands: &[Candidate],
        observed: &str,
        include_end: bool,
        rng: &mut R,
    ) -> Result<bool, SmcError> {
        let scores = self.proposal_scores(&p.intended[..s], cands)?;
        let log_total = logsumexp(&scores);
        if log_total == f64::NEG_INFINITY {
            return Ok(false);
        }
        let pick = sample_log(&scores, log_total, rng);
        let new = cands[pick];
        let old_word = p.intended[s];
        let old_action = p.actions[s];

        let old_right = self.right_logprob(&p.intended, s, include_end)?;
        let mut alt = p.intended.clone();
        alt[s] = new.word;
        let new_right = self.right_logprob(&alt, s, include_end)?;
        let log_alpha = new_right - old_right;
        let u: f64 = rng.gen();
        // a self-move has log_alpha == 0 and is always accepted
        if !(log_alpha >= 0.0 || u.ln() < log_alpha) {
            return Ok(false);
        }

        let old_left = self.prior.logprob(&p.intended[..s], old_word)?;
        let new_noise = self.noise.log_action_prob(new.action) + new.log_emission;
        let old_noise = self.noise.log_action_prob(old_action)
            + self.noise.emission_logprob(old_word, observed, old_action);
        let new_left = scores[pick] - new_noise;
        p.intended = alt;
        p.actions[s] = new.action;
        p.log_prior += (new_left - old_left) + (new_right - old_right);
        p.log_lik += new_noise - old_noise;
        Ok(true)
    }

    /// LM terms that condition on position `s`: the words after it within the
    /// prior's context window, and the end marker if requested and in reach.
    fn right_logprob(&self, x: &[WordId], s: usize, include_end: bool) -> Result<f64, SmcError> {
        let n = x.len();
        let window = self.prior.context_window();
        let upper = match window {
            Some(w) => (s + w + 1).min(n),
            None => n,
        };
        let mut total = 0.0;
        for j in s + 1..upper {
            total += self.prior.logprob(&x[..j], x[j])?;
        }
        if include_end && window.is_none_or(|w| s + w >= n) {
            total += self.prior.logprob(x, self.prior.end_id())?;
        }
        Ok(total)
    }
}
