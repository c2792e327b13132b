//! Masked-prediction PMI between the critical word and the predicate, and
//! the Wilcoxon signed-rank test on per-item differences.
//!
//! PMI logic only asks an oracle two things: how many subword tokens a span
//! occupies, and the probability of a word at a masked position. The
//! remote service and an in-memory lookup table both answer them.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::lexicon::{normalize, tokenize};
use crate::service::{MaskedRequest, ServiceClient, ServiceError, WIRE_MASK};
use crate::stimuli::{expand_item, Condition, ConditionVariant, Item, Region, StimuliError};

/// Largest sample size for which the exact null distribution is used.
pub const EXACT_WILCOXON_MAX_N: usize = 20;

#[derive(Debug, Error)]
pub enum PmiError {
    #[error(transparent)]
    Backend(#[from] ServiceError),
    #[error("{word:?} is more than one subword token")]
    MultiToken { word: String },
    #[error("zero probability for {candidate:?} in {sentence:?}")]
    ZeroProbability { sentence: String, candidate: String },
    #[error("oracle has no entry for {candidate:?} in {sentence:?}")]
    Missing { sentence: String, candidate: String },
    #[error("oracle returned invalid probability {0}")]
    InvalidProbability(f64),
    #[error("item {item}: missing PMI for critical {j}, predicate {k}")]
    MissingScore { item: String, j: u8, k: u8 },
    #[error("variant {0} has no single-word critical region or no predicate")]
    BadVariant(String),
    #[error("all differences are zero")]
    Degenerate,
    #[error(transparent)]
    Stimuli(#[from] StimuliError),
    #[error("invalid oracle table: {0}")]
    Table(String),
}

impl PmiError {
    /// True for the subword exclusion signal rather than a failure.
    pub fn is_exclusion(&self) -> bool {
        matches!(self, PmiError::MultiToken { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MaskedProb {
    Prob(f64),
    MultiToken,
}

pub trait MaskedOracle: Send + Sync {
    fn mask(&self) -> &str {
        WIRE_MASK
    }

    /// Subword tokens occupied by `span`.
    fn token_count(&self, span: &str) -> Result<usize, PmiError>;

    /// Probability of `candidate` at `tokens[target_index]`, which holds the mask.
    fn masked_prob(&self, tokens: &[String], target_index: usize, candidate: &str) -> Result<MaskedProb, PmiError>;
}

/// Joins tokens with spaces, attaching punctuation-only tokens to the
/// previous one.
pub fn render(tokens: &[String]) -> String {
    let mut out = String::new();
    for t in tokens {
        let punct = !t.is_empty() && t.chars().all(|c| c.is_ascii_punctuation()) && t != WIRE_MASK;
        if !out.is_empty() && !punct {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

/// The two masked sentences for one variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PmiQueries {
    pub item: String,
    pub candidate: String,
    pub numerator: Vec<String>,
    pub denominator: Vec<String>,
    pub target_index: usize,
    /// Subword tokens of the predicate, one mask each in the denominator.
    pub k: usize,
}

/// Builds the numerator (critical word masked) and denominator (critical
/// word and predicate masked) sentences.
pub fn build_queries(v: &ConditionVariant, oracle: &dyn MaskedOracle) -> Result<PmiQueries, PmiError> {
    let (cs, ce) = v
        .span(Region::CriticalWord)
        .filter(|(s, e)| e - s == 1)
        .ok_or_else(|| PmiError::BadVariant(v.key()))?;
    let (ps, pe) = v
        .span(Region::Predicate)
        .ok_or_else(|| PmiError::BadVariant(v.key()))?;
    let critical = tokenize(&v.tokens[cs]).pop().ok_or_else(|| PmiError::BadVariant(v.key()))?;
    let candidate = critical.word.clone();
    if oracle.token_count(&candidate)? != 1 {
        return Err(PmiError::MultiToken { word: candidate });
    }
    let mask = oracle.mask().to_string();

    let mut numerator = v.tokens.clone();
    numerator[cs] = format!("{mask}{}", critical.punct);

    let predicate = v.tokens[ps..pe].join(" ");
    let body = predicate.trim_end_matches(|c: char| c.is_ascii_punctuation());
    let final_punct = &predicate[body.len()..];
    let k = oracle.token_count(body)?;
    let mut denominator: Vec<String> = v.tokens[..ce].to_vec();
    denominator[cs] = numerator[cs].clone();
    denominator.extend(v.tokens[ce..ps].iter().cloned());
    denominator.extend(std::iter::repeat_n(mask, k));
    if !final_punct.is_empty() {
        denominator.push(final_punct.to_string());
    }
    Ok(PmiQueries {
        item: v.item.clone(),
        candidate,
        numerator,
        denominator,
        target_index: cs,
        k,
    })
}

fn prob(oracle: &dyn MaskedOracle, tokens: &[String], target: usize, cand: &str) -> Result<f64, PmiError> {
    match oracle.masked_prob(tokens, target, cand)? {
        MaskedProb::MultiToken => Err(PmiError::MultiToken { word: cand.to_string() }),
        MaskedProb::Prob(0.0) => Err(PmiError::ZeroProbability {
            sentence: render(tokens),
            candidate: cand.to_string(),
        }),
        MaskedProb::Prob(p) if !(p > 0.0 && p <= 1.0) => Err(PmiError::InvalidProbability(p)),
        MaskedProb::Prob(p) => Ok(p),
    }
}

/// `log2 P(c | numerator) - log2 P(c | denominator)`.
pub fn pmi_bits(oracle: &dyn MaskedOracle, q: &PmiQueries) -> Result<f64, PmiError> {
    let num = prob(oracle, &q.numerator, q.target_index, &q.candidate)?;
    let den = prob(oracle, &q.denominator, q.target_index, &q.candidate)?;
    Ok(num.log2() - den.log2())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmiScore {
    pub item: String,
    /// Critical word index (1 or 2).
    pub j: u8,
    /// Predicate index (1 or 2).
    pub k: u8,
    pub bits: f64,
}

/// `(j, k)` of a Plausible or Neighbor-GP variant.
pub fn pair_indices(v: &ConditionVariant) -> Option<(u8, u8)> {
    match (v.condition, v.variant) {
        (Condition::Plausible, n) => Some((n, n)),
        (Condition::NeighborGP, 1) => Some((2, 1)),
        (Condition::NeighborGP, 2) => Some((1, 2)),
        _ => None,
    }
}

/// The four PMI scores of an item.
pub fn score_item(item: &Item, oracle: &dyn MaskedOracle) -> Result<Vec<PmiScore>, PmiError> {
    let variants = expand_item(item)?;
    let mut out = Vec::with_capacity(4);
    for v in &variants {
        let Some((j, k)) = pair_indices(v) else { continue };
        let q = build_queries(v, oracle)?;
        out.push(PmiScore {
            item: item.id.clone(),
            j,
            k,
            bits: pmi_bits(oracle, &q)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPmiAggregate {
    pub item: String,
    pub pmi_plausible: f64,
    pub pmi_gp: f64,
    pub delta: f64,
}

pub fn aggregate_item(scores: &[PmiScore]) -> Result<ItemPmiAggregate, PmiError> {
    let item = scores.first().map(|s| s.item.clone()).unwrap_or_default();
    let get = |j: u8, k: u8| {
        scores
            .iter()
            .find(|s| s.j == j && s.k == k)
            .map(|s| s.bits)
            .ok_or_else(|| PmiError::MissingScore { item: item.clone(), j, k })
    };
    let plausible = 0.5 * (get(1, 1)? + get(2, 2)?);
    let gp = 0.5 * (get(1, 2)? + get(2, 1)?);
    Ok(ItemPmiAggregate {
        item: item.clone(),
        pmi_plausible: plausible,
        pmi_gp: gp,
        delta: plausible - gp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Non-zero differences used.
    pub n: usize,
    /// Sum of ranks of positive differences.
    pub statistic: f64,
    pub p_two_sided: f64,
    pub method: WilcoxonMethod,
}

/// Average ranks (1-based) of `|d|`, with the tie-group sizes.
fn signed_ranks(d: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.sort_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs()));
    let mut ranks = vec![0.0; d.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && d[idx[j + 1]].abs() == d[idx[i]].abs() {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Two-sided Wilcoxon signed-rank test. Exact zeros are dropped; ties get
/// average ranks. For `n <= 20` the exact null distribution of the
/// statistic is computed over all sign assignments of the observed ranks;
/// above that a normal approximation with tie and continuity corrections.
pub fn wilcoxon_signed_rank(deltas: &[f64]) -> Result<WilcoxonResult, PmiError> {
    let d: Vec<f64> = deltas.iter().copied().filter(|x| *x != 0.0).collect();
    if d.is_empty() {
        return Err(PmiError::Degenerate);
    }
    let n = d.len();
    let (ranks, ties) = signed_ranks(&d);
    let w: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    if n <= EXACT_WILCOXON_MAX_N {
        // doubled ranks are integers even with average ranks
        let r2: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max: usize = r2.iter().sum();
        let mut counts = vec![0f64; max + 1];
        counts[0] = 1.0;
        for &r in &r2 {
            for s in (r..=max).rev() {
                counts[s] += counts[s - r];
            }
        }
        let total = 2f64.powi(n as i32);
        let w2 = (2.0 * w).round() as usize;
        let lower: f64 = counts[..=w2].iter().sum::<f64>() / total;
        let upper: f64 = counts[w2..].iter().sum::<f64>() / total;
        return Ok(WilcoxonResult {
            n,
            statistic: w,
            p_two_sided: (2.0 * lower.min(upper)).min(1.0),
            method: WilcoxonMethod::Exact,
        });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(WilcoxonResult {
        n,
        statistic: w,
        p_two_sided: (2.0 * normal.sf(z)).min(1.0),
        method: WilcoxonMethod::Normal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub item: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmiReport {
    pub scores: Vec<PmiScore>,
    pub aggregates: Vec<ItemPmiAggregate>,
    pub excluded: Vec<Exclusion>,
    pub test: Option<WilcoxonResult>,
}

/// Scores every item, skipping those with a multi-token critical word, and
/// tests the per-item differences.
pub fn run_pmi(items: &[Item], oracle: &dyn MaskedOracle) -> Result<PmiReport, PmiError> {
    let mut scores = Vec::new();
    let mut aggregates = Vec::new();
    let mut excluded = Vec::new();
    for it in items {
        match score_item(it, oracle) {
            Ok(s) => {
                aggregates.push(aggregate_item(&s)?);
                scores.extend(s);
            }
            Err(e) if e.is_exclusion() => excluded.push(Exclusion {
                item: it.id.clone(),
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    let deltas: Vec<f64> = aggregates.iter().map(|a| a.delta).collect();
    let test = match wilcoxon_signed_rank(&deltas) {
        Ok(t) => Some(t),
        Err(PmiError::Degenerate) => None,
        Err(e) => return Err(e),
    };
    Ok(PmiReport {
        scores,
        aggregates,
        excluded,
        test,
    })
}

/// In-memory oracle keyed by rendered sentence and candidate. Spans without
/// an explicit token count count one token per word.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LookupOracle {
    #[serde(default)]
    pub entries: Vec<LookupEntry>,
    #[serde(default)]
    pub token_counts: HashMap<String, usize>,
    #[serde(skip)]
    index: HashMap<(String, String), MaskedProb>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupEntry {
    pub sentence: String,
    pub candidate: String,
    #[serde(default)]
    pub prob: Option<f64>,
    #[serde(default)]
    pub multi_token: bool,
}

impl LookupOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sentence: &str, candidate: &str, p: MaskedProb) {
        let (prob, multi_token) = match p {
            MaskedProb::Prob(x) => (Some(x), false),
            MaskedProb::MultiToken => (None, true),
        };
        self.entries.push(LookupEntry {
            sentence: sentence.to_string(),
            candidate: candidate.to_string(),
            prob,
            multi_token,
        });
        self.index.insert((sentence.to_string(), normalize(candidate)), p);
    }

    pub fn set_token_count(&mut self, span: &str, k: usize) {
        self.token_counts.insert(span.to_string(), k);
    }

    pub fn from_json(s: &str) -> Result<Self, PmiError> {
        let mut o: LookupOracle = serde_json::from_str(s).map_err(|e| PmiError::Table(e.to_string()))?;
        for e in &o.entries {
            let p = match (e.prob, e.multi_token) {
                (_, true) => MaskedProb::MultiToken,
                (Some(p), false) => MaskedProb::Prob(p),
                (None, false) => {
                    return Err(PmiError::Table(format!(
                        "entry for {:?} has neither prob nor multi_token",
                        e.candidate
                    )))
                }
            };
            o.index.insert((e.sentence.clone(), normalize(&e.candidate)), p);
        }
        Ok(o)
    }

    pub fn load(path: &Path) -> Result<Self, PmiError> {
        let s = std::fs::read_to_string(path).map_err(|e| PmiError::Table(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("oracle table serializes")
    }
}

impl MaskedOracle for LookupOracle {
    fn token_count(&self, span: &str) -> Result<usize, PmiError> {
        Ok(self
            .token_counts
            .get(span)
            .copied()
            .unwrap_or_else(|| span.split_whitespace().count()))
    }

    fn masked_prob(&self, tokens: &[String], _target: usize, candidate: &str) -> Result<MaskedProb, PmiError> {
        let sentence = render(tokens);
        self.index
            .get(&(sentence.clone(), normalize(candidate)))
            .copied()
            .ok_or_else(|| PmiError::Missing {
                sentence,
                candidate: candidate.to_string(),
            })
    }
}

/// Oracle backed by the language-model service.
#[derive(Debug, Clone)]
pub struct RemoteMaskedOracle {
    client: Arc<ServiceClient>,
}

impl RemoteMaskedOracle {
    pub fn new(client: Arc<ServiceClient>) -> Self {
        Self { client }
    }
}

impl MaskedOracle for RemoteMaskedOracle {
    fn token_count(&self, span: &str) -> Result<usize, PmiError> {
        Ok(self.client.span_tokens(span)?.k)
    }

    fn masked_prob(&self, tokens: &[String], target_index: usize, candidate: &str) -> Result<MaskedProb, PmiError> {
        let r = self.client.masked(&MaskedRequest {
            tokens: tokens.to_vec(),
            target_index,
            candidate: candidate.to_string(),
        })?;
        match (r.multi_token, r.prob) {
            (Some(true), _) => Ok(MaskedProb::MultiToken),
            (_, Some(p)) => Ok(MaskedProb::Prob(p)),
            _ => Err(PmiError::Backend(ServiceError::Protocol {
                url: self.client.base_url().to_string(),
                message: "masked response has neither prob nor multi_token".into(),
            })),
        }
    }
}
