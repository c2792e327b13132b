//! Particle-filter inference over intended sentences.
//!
//! Each particle carries a hypothesis about the intended words and the
//! channel action that produced every observed token. At each word the
//! particle extends its hypothesis from the locally optimal proposal
//!
//! ```text
//! q(x_t, a_t) ∝ P(x_t | x_<t) · P(a_t) · P(u_t | x_t, a_t)
//! ```
//!
//! restricted to the candidate explanations of the observed token, and its
//! incremental weight is the normalizer of that proposal. The weighted mean
//! of incremental weights estimates `P(u_t | u_<t)`, whose negative log is
//! the word's surprisal. After the last word, every particle is reweighted
//! by the end-of-sentence probability and Metropolis-Hastings rejuvenation
//! sweeps revise earlier choices in light of the whole sentence.
//!
//! Random draws come from per-(step, particle) ChaCha substreams, so results
//! do not depend on how rayon schedules the particles, and two sentences
//! sharing a prefix yield identical ensembles over that prefix.

mod exact;
mod rejuvenation;
mod rng;
mod summary;

pub use exact::{enumerate_exact, DEFAULT_ENUMERATION_BUDGET};
pub use rejuvenation::{conditional_trigger, RejuvenationStats};
pub use summary::{summarize, PosteriorSummary, SummaryRow, SCHEMA_VERSION};

use std::f64::consts::LN_2;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{normalize, WordId};
use crate::math::logsumexp;
use crate::noise::{Action, Candidate, NoiseModel};
use crate::prior::{top_unigram_words, PriorError, PriorModel};

use rng::{substream, Stream};

#[derive(Debug, Error)]
pub enum SmcError {
    #[error("no particle can explain word {position} ({word:?})")]
    Degenerate { position: usize, word: String },
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error("enumeration for {instance} needs {size:.3e} paths, budget is {budget}")]
    OracleBudget {
        instance: String,
        size: f64,
        budget: u64,
    },
    #[error("inference configuration error: {0}")]
    Config(String),
}

/// Inference settings. Field names follow the reference model's parameter
/// spelling so configuration files can be shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub num_particles: usize,
    pub resample_ess_fraction: f64,
    pub conditional_rejuv: bool,
    /// Trigger threshold in bits for conditional rejuvenation.
    pub conditional_threshold: f64,
    pub second_pass_rejuv: bool,
    pub second_pass_rejuv_p: f64,
    pub second_pass_rejuv_iters: usize,
    pub proposal_top_m: usize,
    pub sentence_top_n: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            num_particles: 128,
            resample_ess_fraction: 0.5,
            conditional_rejuv: false,
            conditional_threshold: 0.0,
            second_pass_rejuv: true,
            second_pass_rejuv_p: 1.0,
            second_pass_rejuv_iters: 3,
            proposal_top_m: 50,
            sentence_top_n: 50,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<(), SmcError> {
        if self.num_particles == 0 {
            return Err(SmcError::Config("num_particles must be >= 1".into()));
        }
        if !(self.resample_ess_fraction > 0.0 && self.resample_ess_fraction <= 1.0) {
            return Err(SmcError::Config(
                "resample_ess_fraction must lie in (0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.second_pass_rejuv_p) {
            return Err(SmcError::Config(
                "second_pass_rejuv_p must lie in [0, 1]".into(),
            ));
        }
        if !self.conditional_threshold.is_finite() {
            return Err(SmcError::Config("conditional_threshold must be finite".into()));
        }
        Ok(())
    }
}

/// One weighted hypothesis about the intended sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub intended: Vec<WordId>,
    pub actions: Vec<Action>,
    /// Accumulated language-model log-probability of `intended`.
    pub log_prior: f64,
    /// Accumulated action-prior and emission log-probability.
    pub log_lik: f64,
    /// Weight contributed by the latest step (linear domain).
    pub incremental_weight: f64,
    /// Unnormalized log weight since the last resampling.
    pub log_weight: f64,
}

impl Particle {
    fn empty() -> Self {
        Self {
            intended: Vec::new(),
            actions: Vec::new(),
            log_prior: 0.0,
            log_lik: 0.0,
            incremental_weight: 1.0,
            log_weight: 0.0,
        }
    }
}

/// The particle population for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub particles: Vec<Particle>,
    seed: u64,
    observed: Vec<String>,
    candidates: Vec<Arc<Vec<Candidate>>>,
    /// Predictive probability of each consumed word.
    history: Vec<f64>,
    log_history: Vec<f64>,
    log_evidence: f64,
    finished: bool,
    conditional_sweeps: Vec<usize>,
    conditional_stats: RejuvenationStats,
}

impl Ensemble {
    pub fn step_count(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn observed(&self) -> &[String] {
        &self.observed
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Log marginal likelihood estimate accumulated so far.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Positions after which conditional rejuvenation fired.
    pub fn conditional_sweeps(&self) -> &[usize] {
        &self.conditional_sweeps
    }

    /// Move counts of all conditional sweeps so far.
    pub fn conditional_stats(&self) -> &RejuvenationStats {
        &self.conditional_stats
    }

    /// Self-normalized particle weights.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let lw: Vec<f64> = self.particles.iter().map(|p| p.log_weight).collect();
        crate::math::normalize_log_weights(&lw)
    }

    pub fn ess(&self) -> f64 {
        let w = self.normalized_weights();
        1.0 / w.iter().map(|x| x * x).sum::<f64>()
    }
}

/// Surprisal in bits of each step's predictive probability.
pub fn surprisal_trace(history: &[f64]) -> Vec<f64> {
    history.iter().map(|p| -p.log2()).collect()
}

/// Output of a full inference run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: PosteriorSummary,
    pub ensemble: Ensemble,
    pub rejuvenation: RejuvenationStats,
}

/// Binds a prior and a noise model to an inference configuration.
pub struct Engine<'a> {
    prior: &'a dyn PriorModel,
    noise: &'a NoiseModel,
    cfg: InferenceConfig,
    sem_pool: Vec<WordId>,
}

impl<'a> Engine<'a> {
    pub fn new(
        prior: &'a dyn PriorModel,
        noise: &'a NoiseModel,
        cfg: InferenceConfig,
    ) -> Result<Self, SmcError> {
        cfg.validate()?;
        if prior.vocabulary().words() != noise.vocabulary().words() {
            return Err(SmcError::Config(
                "prior and noise model use different vocabularies".into(),
            ));
        }
        let sem_pool = top_unigram_words(prior, cfg.proposal_top_m)?;
        Ok(Self {
            prior,
            noise,
            cfg,
            sem_pool,
        })
    }

    pub fn config(&self) -> &InferenceConfig {
        &self.cfg
    }

    pub fn prior(&self) -> &dyn PriorModel {
        self.prior
    }

    pub fn noise(&self) -> &NoiseModel {
        self.noise
    }

    /// Words eligible as intended words under semantic substitution.
    pub fn sem_pool(&self) -> &[WordId] {
        &self.sem_pool
    }

    pub fn candidates(&self, observed: &str) -> Vec<Candidate> {
        self.noise.candidate_intendeds(observed, &self.sem_pool)
    }

    pub fn init(&self, seed: u64) -> Ensemble {
        Ensemble {
            particles: vec![Particle::empty(); self.cfg.num_particles],
            seed,
            observed: Vec::new(),
            candidates: Vec::new(),
            history: Vec::new(),
            log_history: Vec::new(),
            log_evidence: 0.0,
            finished: false,
            conditional_sweeps: Vec::new(),
            conditional_stats: RejuvenationStats::default(),
        }
    }

    /// Consumes one observed word; returns its predictive probability.
    pub fn step(&self, e: &mut Ensemble, observed: &str) -> Result<f64, SmcError> {
        if e.finished {
            return Err(SmcError::Config("ensemble already finished".into()));
        }
        let t = e.history.len();
        let word = normalize(observed);
        let cands = Arc::new(self.candidates(&word));
        if cands.is_empty() {
            return Err(SmcError::Degenerate { position: t, word });
        }
        let prev: Vec<f64> = e.particles.iter().map(|p| p.log_weight).collect();
        let seed = e.seed;
        let moved: Vec<(Particle, f64)> = e
            .particles
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut rng = substream(seed, Stream::Step, t as u64, i as u64);
                self.propagate(p, &cands, &mut rng)
            })
            .collect::<Result<_, _>>()?;
        let joint: Vec<f64> = prev.iter().zip(&moved).map(|(a, (_, w))| a + w).collect();
        let log_pred = logsumexp(&joint) - logsumexp(&prev);
        if log_pred == f64::NEG_INFINITY || log_pred.is_nan() {
            return Err(SmcError::Degenerate { position: t, word });
        }
        e.particles = moved.into_iter().map(|(p, _)| p).collect();
        e.observed.push(word.clone());
        e.candidates.push(cands);
        e.log_history.push(log_pred);
        e.history.push(log_pred.exp());
        e.log_evidence += log_pred;
        self.maybe_resample(e, Stream::Resample, t as u64);

        if self.cfg.conditional_rejuv {
            let surprisal = -log_pred / LN_2;
            let unigram_bits = match self.prior.vocabulary().id(&word) {
                Some(id) => -self.prior.unigram_logprob(id)? / LN_2,
                // non-words have no unigram probability; compare raw surprisal
                None => 0.0,
            };
            if conditional_trigger(surprisal, unigram_bits, self.cfg.conditional_threshold) {
                let stats = self.sweep(e, 0..t + 1, false, Stream::Conditional, t as u64)?;
                e.conditional_stats.absorb(&stats);
                e.conditional_sweeps.push(t);
            }
        }
        Ok(e.history[t])
    }

    fn propagate<R: Rng>(
        &self,
        p: &Particle,
        cands: &[Candidate],
        rng: &mut R,
    ) -> Result<(Particle, f64), SmcError> {
        let scores = self.proposal_scores(&p.intended, cands)?;
        let log_w = logsumexp(&scores);
        let mut child = p.clone();
        let pick = if log_w == f64::NEG_INFINITY {
            0
        } else {
            sample_log(&scores, log_w, rng)
        };
        let c = cands[pick];
        let lm = scores[pick] - self.noise.log_action_prob(c.action) - c.log_emission;
        child.intended.push(c.word);
        child.actions.push(c.action);
        child.log_prior += lm;
        child.log_lik += self.noise.log_action_prob(c.action) + c.log_emission;
        child.incremental_weight = log_w.exp();
        child.log_weight = p.log_weight + log_w;
        Ok((child, log_w))
    }

    /// Unnormalized log proposal mass of every candidate after `prefix`.
    fn proposal_scores(&self, prefix: &[WordId], cands: &[Candidate]) -> Result<Vec<f64>, SmcError> {
        let words: Vec<WordId> = cands.iter().map(|c| c.word).collect();
        let lm = self.prior.logprobs_for(prefix, &words)?;
        Ok(cands
            .iter()
            .zip(lm)
            .map(|(c, l)| l + self.noise.log_action_prob(c.action) + c.log_emission)
            .collect())
    }

    fn maybe_resample(&self, e: &mut Ensemble, stream: Stream, index: u64) {
        let k = e.particles.len();
        if e.ess() >= self.cfg.resample_ess_fraction * k as f64 {
            return;
        }
        let w = e.normalized_weights();
        let mut rng = substream(e.seed, stream, index, 0);
        let u0: f64 = rng.gen::<f64>() / k as f64;
        let mut out = Vec::with_capacity(k);
        let mut cum = w[0];
        let mut j = 0;
        for i in 0..k {
            let u = u0 + i as f64 / k as f64;
            while u > cum && j < k - 1 {
                j += 1;
                cum += w[j];
            }
            let mut p = e.particles[j].clone();
            p.log_weight = 0.0;
            out.push(p);
        }
        e.particles = out;
    }

    /// Scores the end of sentence for every particle.
    pub fn finish(&self, e: &mut Ensemble) -> Result<(), SmcError> {
        if e.finished {
            return Ok(());
        }
        let end = self.prior.end_id();
        let prev: Vec<f64> = e.particles.iter().map(|p| p.log_weight).collect();
        let ends: Vec<f64> = e
            .particles
            .par_iter()
            .map(|p| self.prior.logprob(&p.intended, end))
            .collect::<Result<_, _>>()?;
        let joint: Vec<f64> = prev.iter().zip(&ends).map(|(a, b)| a + b).collect();
        let log_z = logsumexp(&joint) - logsumexp(&prev);
        if log_z == f64::NEG_INFINITY || log_z.is_nan() {
            return Err(SmcError::Degenerate {
                position: e.history.len(),
                word: "</s>".into(),
            });
        }
        for (p, l) in e.particles.iter_mut().zip(ends) {
            p.log_prior += l;
            p.log_weight += l;
        }
        e.log_evidence += log_z;
        e.finished = true;
        self.maybe_resample(e, Stream::Final, 0);
        Ok(())
    }

    /// Full pipeline: steps, end-of-sentence weighting, second-pass
    /// rejuvenation and summary.
    pub fn run(&self, sentence_id: &str, words: &[String], seed: u64) -> Result<RunOutput, SmcError> {
        let mut e = self.init(seed);
        for w in words {
            self.step(&mut e, w)?;
        }
        self.finish(&mut e)?;
        let stats = if self.cfg.second_pass_rejuv {
            self.second_pass_rejuvenate(&mut e)?
        } else {
            RejuvenationStats::new(e.observed.len())
        };
        let mut summary = summarize(&e, &stats, self.prior.vocabulary(), Some(self.cfg.sentence_top_n));
        summary.sentence_id = sentence_id.to_string();
        summary.seed = Some(seed);
        summary.num_particles = Some(self.cfg.num_particles);
        Ok(RunOutput {
            summary,
            ensemble: e,
            rejuvenation: stats,
        })
    }
}

/// Samples an index with probability `exp(scores[i] - log_total)`.
fn sample_log<R: Rng>(scores: &[f64], log_total: f64, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s == f64::NEG_INFINITY {
            continue;
        }
        cum += (s - log_total).exp();
        last = i;
        if u < cum {
            return i;
        }
    }
    last
}
