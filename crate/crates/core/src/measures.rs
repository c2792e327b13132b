//! Word-level reading measures from mouse-tracking-for-reading trajectories.
//!
//! Samples are hit-tested against word boxes; dwell runs long enough to
//! count become fixations, and the usual first-pass and cumulative measures
//! are derived from the fixation sequence. Moving the spotlight past the end
//! of the text is kept as a pseudo-visit so that coming back into the last
//! region counts as a regression in.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeasuresError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("trial {participant}/{trial}: {reason}")]
    InvalidTrial {
        participant: String,
        trial: String,
        reason: String,
    },
    #[error("unknown measure {0:?}")]
    UnknownMeasure(String),
    #[error("unknown response {0:?}")]
    UnknownResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Response {
    #[serde(rename = "OK")]
    Ok,
    Error,
    Unsure,
}

impl Response {
    pub const ALL: [Response; 3] = [Response::Ok, Response::Error, Response::Unsure];
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Response::Ok => "OK",
            Response::Error => "Error",
            Response::Unsure => "Unsure",
        })
    }
}

impl FromStr for Response {
    type Err = MeasuresError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "ok" | "sentence was ok" => Ok(Response::Ok),
            "error" | "i noticed an error" => Ok(Response::Error),
            "unsure" | "not sure" => Ok(Response::Unsure),
            _ => Err(MeasuresError::UnknownResponse(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub timestamp_ms: i64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl WordBox {
    fn contains(&self, x: f64, y: f64, inclusive: bool) -> bool {
        if inclusive {
            x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
        } else {
            x > self.x_min && x < self.x_max && y > self.y_min && y < self.y_max
        }
    }

    fn overlaps(&self, o: &WordBox) -> bool {
        self.x_min < o.x_max && o.x_min < self.x_max && self.y_min < o.y_max && o.y_min < self.y_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub participant: String,
    pub trial: String,
    pub item: Option<String>,
    pub condition: Option<String>,
    pub variant: Option<u8>,
    pub samples: Vec<Sample>,
    pub word_boxes: Vec<WordBox>,
    pub response: Option<Response>,
    pub is_filler: bool,
}

impl TrialLog {
    pub fn validate(&self) -> Result<(), MeasuresError> {
        let bad = |reason: String| MeasuresError::InvalidTrial {
            participant: self.participant.clone(),
            trial: self.trial.clone(),
            reason,
        };
        if let Some(w) = self
            .samples
            .windows(2)
            .find(|w| w[1].timestamp_ms <= w[0].timestamp_ms)
        {
            return Err(bad(format!(
                "timestamps not increasing at {} ms",
                w[1].timestamp_ms
            )));
        }
        for (i, a) in self.word_boxes.iter().enumerate() {
            for (j, b) in self.word_boxes.iter().enumerate().skip(i + 1) {
                if a.overlaps(b) {
                    return Err(bad(format!("word boxes {i} and {j} overlap")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasureConfig {
    pub min_dwell_ms: i64,
    /// Whether points on a box edge hit the box.
    pub inclusive_edges: bool,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            min_dwell_ms: 100,
            inclusive_edges: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixationEvent {
    pub word: usize,
    pub onset_ms: i64,
    pub offset_ms: i64,
    /// Word of the previous retained visit; `word_count` marks an excursion
    /// past the end of the text.
    pub source: Option<usize>,
}

impl FixationEvent {
    pub fn duration(&self) -> i64 {
        self.offset_ms - self.onset_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    Word(usize),
    BeyondEnd,
    Elsewhere,
}

fn hit(boxes: &[WordBox], s: &Sample, inclusive: bool) -> Target {
    if let Some(i) = boxes.iter().position(|b| b.contains(s.x, s.y, inclusive)) {
        return Target::Word(i);
    }
    match boxes.last() {
        Some(last) if s.y > last.y_max || (s.y >= last.y_min && s.x > last.x_max) => {
            Target::BeyondEnd
        }
        _ => Target::Elsewhere,
    }
}

/// Fixations of a trial. Each sample lasts until the next one; the final
/// sample has no duration.
pub fn detect_fixations(t: &TrialLog, cfg: &MeasureConfig) -> Vec<FixationEvent> {
    let n = t.word_boxes.len();
    let s = &t.samples;
    // (target, onset, offset) of maximal same-target runs
    let mut runs: Vec<(Target, i64, i64)> = Vec::new();
    for (i, smp) in s.iter().enumerate() {
        let tgt = hit(&t.word_boxes, smp, cfg.inclusive_edges);
        let end = s.get(i + 1).map_or(smp.timestamp_ms, |nx| nx.timestamp_ms);
        match runs.last_mut() {
            Some(r) if r.0 == tgt => r.2 = end,
            _ => runs.push((tgt, smp.timestamp_ms, end)),
        }
    }
    let mut visits: Vec<(Target, i64, i64)> = Vec::new();
    for r in runs {
        if r.0 == Target::Elsewhere || r.2 - r.1 < cfg.min_dwell_ms {
            continue;
        }
        match visits.last_mut() {
            Some(v) if v.0 == r.0 => v.2 = r.2,
            _ => visits.push(r),
        }
    }
    let mut out = Vec::new();
    let mut prev: Option<usize> = None;
    for (tgt, on, off) in visits {
        match tgt {
            Target::Word(w) => {
                out.push(FixationEvent {
                    word: w,
                    onset_ms: on,
                    offset_ms: off,
                    source: prev,
                });
                prev = Some(w);
            }
            Target::BeyondEnd => prev = Some(n),
            Target::Elsewhere => {}
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordMeasures {
    pub first_fixation_ms: i64,
    pub gaze_ms: i64,
    pub go_past_ms: i64,
    pub right_bounded_ms: i64,
    pub total_ms: i64,
    pub reread_ms: i64,
    pub first_pass_fixated: bool,
    pub first_pass_reg_out: bool,
    pub reg_in: bool,
}

pub const MEASURE_NAMES: [&str; 9] = [
    "first_fixation_ms",
    "gaze_ms",
    "go_past_ms",
    "right_bounded_ms",
    "total_ms",
    "reread_ms",
    "first_pass_fixated",
    "first_pass_reg_out",
    "reg_in",
];

impl WordMeasures {
    /// Value of a named measure; flags read as 0 or 1.
    pub fn get(&self, name: &str) -> Result<f64, MeasuresError> {
        Ok(match name {
            "first_fixation_ms" => self.first_fixation_ms as f64,
            "gaze_ms" => self.gaze_ms as f64,
            "go_past_ms" => self.go_past_ms as f64,
            "right_bounded_ms" => self.right_bounded_ms as f64,
            "total_ms" => self.total_ms as f64,
            "reread_ms" => self.reread_ms as f64,
            "first_pass_fixated" => self.first_pass_fixated as u8 as f64,
            "first_pass_reg_out" => self.first_pass_reg_out as u8 as f64,
            "reg_in" => self.reg_in as u8 as f64,
            other => return Err(MeasuresError::UnknownMeasure(other.to_string())),
        })
    }

    pub fn chain_holds(&self) -> bool {
        0 <= self.first_fixation_ms
            && self.first_fixation_ms <= self.gaze_ms
            && self.gaze_ms <= self.right_bounded_ms
            && self.right_bounded_ms <= self.go_past_ms
            && self.gaze_ms <= self.total_ms
            && self.reread_ms == self.total_ms - self.gaze_ms
    }
}

/// Measures for words `0..word_count`.
pub fn compute_measures(fix: &[FixationEvent], word_count: usize) -> Vec<WordMeasures> {
    // true where a fixation follows an excursion past the text end
    let after_end: Vec<bool> = fix.iter().map(|f| f.source == Some(word_count)).collect();
    let rightward = |k: usize, w: usize| fix[k].word > w || after_end[k];
    (0..word_count)
        .map(|w| {
            let mut m = WordMeasures {
                total_ms: fix.iter().filter(|f| f.word == w).map(|f| f.duration()).sum(),
                ..WordMeasures::default()
            };
            let Some(first) = fix.iter().position(|f| f.word == w) else {
                return m;
            };
            let passed = (0..first).any(|k| rightward(k, w)) || after_end[first];
            let mut pass_end = first;
            if !passed {
                while pass_end < fix.len() && fix[pass_end].word == w && (pass_end == first || !after_end[pass_end]) {
                    pass_end += 1;
                }
                let run = &fix[first..pass_end];
                m.first_pass_fixated = true;
                m.first_fixation_ms = run[0].duration();
                m.gaze_ms = run.iter().map(|f| f.duration()).sum();
                let exit = (first..fix.len()).find(|&k| rightward(k, w)).unwrap_or(fix.len());
                m.go_past_ms = fix[first..exit].iter().map(|f| f.duration()).sum();
                m.right_bounded_ms = fix[first..exit]
                    .iter()
                    .filter(|f| f.word == w)
                    .map(|f| f.duration())
                    .sum();
                m.first_pass_reg_out = pass_end < fix.len() && fix[pass_end].word < w && !after_end[pass_end];
            }
            let later = if passed { first } else { pass_end };
            m.reg_in = (later..fix.len()).any(|k| fix[k].word == w && fix[k].source.is_some_and(|s| s > w));
            m.reread_ms = m.total_ms - m.gaze_ms;
            m
        })
        .collect()
}

/// One word of one trial after measure computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordRecord {
    pub participant: String,
    pub trial: String,
    pub item: Option<String>,
    pub condition: Option<String>,
    pub variant: Option<u8>,
    pub is_filler: bool,
    pub word_index: usize,
    pub region: Option<String>,
    #[serde(flatten)]
    pub measures: WordMeasures,
    /// Set by the gaze outlier rule; flagged records are left out of
    /// aggregates but kept so the rule can be re-applied unchanged.
    #[serde(default)]
    pub gaze_outlier: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialInfo {
    pub participant: String,
    pub trial: String,
    pub item: Option<String>,
    pub condition: Option<String>,
    pub variant: Option<u8>,
    pub is_filler: bool,
    pub response: Option<Response>,
    pub word_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub trials: Vec<TrialInfo>,
    pub words: Vec<WordRecord>,
}

/// Fixations and measures for every trial, in input order.
pub fn process_trials(logs: &[TrialLog], cfg: &MeasureConfig) -> Result<Dataset, MeasuresError> {
    for t in logs {
        t.validate()?;
    }
    let per: Vec<(TrialInfo, Vec<WordRecord>)> = logs
        .par_iter()
        .map(|t| {
            let n = t.word_boxes.len();
            let fx = detect_fixations(t, cfg);
            let words = compute_measures(&fx, n)
                .into_iter()
                .enumerate()
                .map(|(i, m)| WordRecord {
                    participant: t.participant.clone(),
                    trial: t.trial.clone(),
                    item: t.item.clone(),
                    condition: t.condition.clone(),
                    variant: t.variant,
                    is_filler: t.is_filler,
                    word_index: i,
                    region: None,
                    measures: m,
                    gaze_outlier: false,
                })
                .collect();
            let info = TrialInfo {
                participant: t.participant.clone(),
                trial: t.trial.clone(),
                item: t.item.clone(),
                condition: t.condition.clone(),
                variant: t.variant,
                is_filler: t.is_filler,
                response: t.response,
                word_count: n,
            };
            (info, words)
        })
        .collect();
    let mut ds = Dataset::default();
    for (info, words) in per {
        ds.trials.push(info);
        ds.words.extend(words);
    }
    Ok(ds)
}

/// Labels each word record with its region. `regions` maps
/// `(item, condition, variant)` to per-word region names.
pub fn attach_regions(ds: &mut Dataset, regions: &HashMap<(String, String, u8), Vec<String>>) {
    for w in &mut ds.words {
        if let (Some(i), Some(c), Some(v)) = (&w.item, &w.condition, w.variant) {
            w.region = regions
                .get(&(i.clone(), c.clone(), v))
                .and_then(|r| r.get(w.word_index).cloned());
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub participants_excluded: Vec<String>,
    pub trials_excluded: Vec<(String, String)>,
    pub words_flagged: Vec<(String, String, usize)>,
    pub participant_rule_count: usize,
    pub trial_rule_count: usize,
    pub word_rule_count: usize,
}

/// Applies, in order: the filler-error participant rule (more than 20% of
/// fillers answered Error), the fixation-coverage trial rule (fewer than 20%
/// of words fixated), and the gaze outlier rule (gaze above mean + 3 SD for
/// the same item and word position, over fixated words of retained trials).
pub fn apply_exclusions(ds: &Dataset) -> (Dataset, ExclusionReport) {
    let mut report = ExclusionReport::default();

    let mut filler_counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for t in ds.trials.iter().filter(|t| t.is_filler) {
        let e = filler_counts.entry(&t.participant).or_default();
        e.0 += 1;
        e.1 += (t.response == Some(Response::Error)) as usize;
    }
    let dropped_participants: Vec<String> = filler_counts
        .into_iter()
        .filter(|(_, (n, err))| err * 5 > *n)
        .map(|(p, _)| p.to_string())
        .collect();

    let mut fixated: HashMap<(&str, &str), usize> = HashMap::new();
    for w in &ds.words {
        if w.measures.total_ms > 0 {
            *fixated.entry((&w.participant, &w.trial)).or_default() += 1;
        }
    }
    let mut dropped_trials = Vec::new();
    let mut trials = Vec::new();
    for t in &ds.trials {
        if dropped_participants.contains(&t.participant) {
            continue;
        }
        let f = fixated
            .get(&(t.participant.as_str(), t.trial.as_str()))
            .copied()
            .unwrap_or(0);
        if f * 5 < t.word_count {
            dropped_trials.push((t.participant.clone(), t.trial.clone()));
        } else {
            trials.push(t.clone());
        }
    }
    let kept: std::collections::HashSet<(&str, &str)> = trials
        .iter()
        .map(|t| (t.participant.as_str(), t.trial.as_str()))
        .collect();
    let mut words: Vec<WordRecord> = ds
        .words
        .iter()
        .filter(|w| kept.contains(&(w.participant.as_str(), w.trial.as_str())))
        .cloned()
        .collect();

    let key = |w: &WordRecord| (w.item.clone().unwrap_or_else(|| w.trial.clone()), w.word_index);
    let mut pop: HashMap<(String, usize), Vec<f64>> = HashMap::new();
    for w in words.iter().filter(|w| w.measures.gaze_ms > 0) {
        pop.entry(key(w)).or_default().push(w.measures.gaze_ms as f64);
    }
    let limits: HashMap<(String, usize), f64> = pop
        .into_iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(k, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (k, mean + 3.0 * var.sqrt())
        })
        .collect();
    for w in &mut words {
        let out = w.measures.gaze_ms > 0
            && limits
                .get(&key(w))
                .is_some_and(|lim| w.measures.gaze_ms as f64 > *lim);
        w.gaze_outlier = out;
        if out {
            report
                .words_flagged
                .push((w.participant.clone(), w.trial.clone(), w.word_index));
        }
    }
    report.participant_rule_count = dropped_participants.len();
    report.trial_rule_count = dropped_trials.len();
    report.word_rule_count = report.words_flagged.len();
    report.participants_excluded = dropped_participants;
    report.trials_excluded = dropped_trials;
    (Dataset { trials, words }, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub condition: String,
    pub region: String,
    pub measure: String,
    pub mean: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n: usize,
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap of the pooled word-level mean, resampling
/// participants. `groups` holds each participant's values.
pub fn bootstrap_ci(groups: &[Vec<f64>], b: usize, rng: &mut impl Rng) -> (f64, f64) {
    let p = groups.len();
    let sums: Vec<(f64, usize)> = groups.iter().map(|g| (g.iter().sum(), g.len())).collect();
    let mut stats = Vec::with_capacity(b);
    for _ in 0..b {
        let (mut s, mut n) = (0.0, 0usize);
        for _ in 0..p {
            let (gs, gn) = sums[rng.gen_range(0..p)];
            s += gs;
            n += gn;
        }
        stats.push(s / n as f64);
    }
    stats.sort_by(f64::total_cmp);
    (quantile_sorted(&stats, 0.025), quantile_sorted(&stats, 0.975))
}

/// Condition × region means with participant-bootstrap 95% intervals.
/// Cells are listed for every combination of observed conditions and
/// regions; empty cells have `n = 0` and no interval. Cell `i` (in sorted
/// order) draws from stream `i` of a generator seeded with `seed`.
pub fn aggregate(ds: &Dataset, measure: &str, b: usize, seed: u64) -> Result<Vec<AggregateRow>, MeasuresError> {
    WordMeasures::default().get(measure)?;
    let mut cells: BTreeMap<(String, String), BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    let mut conditions = std::collections::BTreeSet::new();
    let mut regions = std::collections::BTreeSet::new();
    for w in &ds.words {
        if let (Some(c), Some(r)) = (&w.condition, &w.region) {
            conditions.insert(c.clone());
            regions.insert(r.clone());
            if w.is_filler || w.gaze_outlier {
                continue;
            }
            cells
                .entry((c.clone(), r.clone()))
                .or_default()
                .entry(w.participant.clone())
                .or_default()
                .push(w.measures.get(measure)?);
        }
    }
    let mut rows = Vec::new();
    for (i, (c, r)) in conditions
        .iter()
        .flat_map(|c| regions.iter().map(move |r| (c.clone(), r.clone())))
        .enumerate()
    {
        let groups: Vec<Vec<f64>> = cells
            .get(&(c.clone(), r.clone()))
            .map(|m| m.values().cloned().collect())
            .unwrap_or_default();
        let n: usize = groups.iter().map(|g| g.len()).sum();
        let (mean, lo, hi) = if n == 0 {
            (None, None, None)
        } else {
            let mean = groups.iter().flatten().sum::<f64>() / n as f64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (lo, hi) = bootstrap_ci(&groups, b, &mut rng);
            (Some(mean), Some(lo), Some(hi))
        };
        rows.push(AggregateRow {
            condition: c,
            region: r,
            measure: measure.to_string(),
            mean,
            ci_low: lo,
            ci_high: hi,
            n,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRow {
    pub condition: String,
    pub response: Response,
    pub proportion: f64,
    pub count: usize,
}

/// Response proportions per condition; fillers are reported as `Filler`.
pub fn response_summary(ds: &Dataset) -> Vec<ResponseRow> {
    let mut tally: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    for t in &ds.trials {
        let Some(r) = t.response else { continue };
        let c = if t.is_filler {
            "Filler".to_string()
        } else {
            t.condition.clone().unwrap_or_else(|| "Unknown".into())
        };
        let idx = Response::ALL.iter().position(|x| *x == r).unwrap_or(0);
        tally.entry(c).or_default()[idx] += 1;
    }
    let mut rows = Vec::new();
    for (c, counts) in tally {
        let total: usize = counts.iter().sum();
        for (r, k) in Response::ALL.iter().zip(counts) {
            rows.push(ResponseRow {
                condition: c.clone(),
                response: *r,
                proportion: k as f64 / total as f64,
                count: k,
            });
        }
    }
    rows
}

#[derive(Debug, Deserialize)]
struct SampleRow {
    participant: String,
    trial: String,
    timestamp_ms: i64,
    x: f64,
    y: f64,
}

#[derive(Debug, Deserialize)]
struct BoxRow {
    trial: String,
    word_index: usize,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

#[derive(Debug, Deserialize)]
struct ResponseFileRow {
    participant: String,
    trial: String,
    response: String,
}

/// Per-trial metadata row: `trial, item, condition, variant, is_filler`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub trial: String,
    #[serde(default)]
    pub item: Option<String>,
    #[serde(default)]
    pub condition: Option<String>,
    #[serde(default)]
    pub variant: Option<u8>,
    #[serde(default, deserialize_with = "flag")]
    pub is_filler: bool,
}

fn flag<'de, D: serde::Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim().to_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" | "" => Ok(false),
        other => Err(serde::de::Error::custom(format!("bad flag {other:?}"))),
    }
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, MeasuresError> {
    let p = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| MeasuresError::Csv { path: p.clone(), source })?;
    rdr.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|source| MeasuresError::Csv { path: p, source })
}

/// Assembles trial logs from the sample, word-box, response and trial
/// metadata files. Word boxes are shared by every participant's copy of a
/// trial. Samples are sorted by timestamp per trial.
pub fn load_trials(
    samples: &Path,
    boxes: &Path,
    responses: &Path,
    meta: Option<&Path>,
) -> Result<Vec<TrialLog>, MeasuresError> {
    let mut by_trial: BTreeMap<(String, String), Vec<Sample>> = BTreeMap::new();
    for r in read_csv::<SampleRow>(samples)? {
        by_trial.entry((r.participant, r.trial)).or_default().push(Sample {
            timestamp_ms: r.timestamp_ms,
            x: r.x,
            y: r.y,
        });
    }
    let mut box_map: HashMap<String, Vec<(usize, WordBox)>> = HashMap::new();
    for b in read_csv::<BoxRow>(boxes)? {
        box_map.entry(b.trial).or_default().push((
            b.word_index,
            WordBox {
                x_min: b.x_min,
                x_max: b.x_max,
                y_min: b.y_min,
                y_max: b.y_max,
            },
        ));
    }
    let mut resp: HashMap<(String, String), Response> = HashMap::new();
    for r in read_csv::<ResponseFileRow>(responses)? {
        resp.insert((r.participant, r.trial), r.response.parse()?);
    }
    let metas: HashMap<String, TrialMeta> = match meta {
        Some(p) => read_csv::<TrialMeta>(p)?
            .into_iter()
            .map(|m| (m.trial.clone(), m))
            .collect(),
        None => HashMap::new(),
    };
    by_trial
        .into_iter()
        .map(|((participant, trial), mut samples)| {
            samples.sort_by_key(|s| s.timestamp_ms);
            let mut bx = box_map.get(&trial).cloned().unwrap_or_default();
            bx.sort_by_key(|b| b.0);
            if bx.iter().enumerate().any(|(i, b)| b.0 != i) {
                return Err(MeasuresError::InvalidTrial {
                    participant,
                    trial,
                    reason: "word indices are not 0..n".into(),
                });
            }
            let m = metas.get(&trial);
            Ok(TrialLog {
                response: resp.get(&(participant.clone(), trial.clone())).copied(),
                item: m.and_then(|m| m.item.clone()),
                condition: m.and_then(|m| m.condition.clone()),
                variant: m.and_then(|m| m.variant),
                is_filler: m.is_some_and(|m| m.is_filler),
                participant,
                trial,
                samples,
                word_boxes: bx.into_iter().map(|b| b.1).collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fx(seq: &[(usize, i64)]) -> Vec<FixationEvent> {
        let mut t = 0;
        let mut prev = None;
        seq.iter()
            .map(|&(w, d)| {
                let f = FixationEvent {
                    word: w,
                    onset_ms: t,
                    offset_ms: t + d,
                    source: prev,
                };
                t += d;
                prev = Some(w);
                f
            })
            .collect()
    }

    fn line_boxes(n: usize) -> Vec<WordBox> {
        (0..n)
            .map(|i| WordBox {
                x_min: 100.0 * i as f64,
                x_max: 100.0 * i as f64 + 90.0,
                y_min: 0.0,
                y_max: 20.0,
            })
            .collect()
    }

    fn trial(samples: &[(i64, f64)], n: usize) -> TrialLog {
        TrialLog {
            participant: "p".into(),
            trial: "t".into(),
            item: None,
            condition: None,
            variant: None,
            samples: samples
                .iter()
                .map(|&(t, x)| Sample {
                    timestamp_ms: t,
                    x,
                    y: 10.0,
                })
                .collect(),
            word_boxes: line_boxes(n),
            response: None,
            is_filler: false,
        }
    }

    #[test]
    fn regression_example() {
        let m = compute_measures(&fx(&[(0, 200), (1, 300), (0, 150), (2, 250)]), 3);
        assert_eq!(m[0].gaze_ms, 200);
        assert_eq!(m[0].total_ms, 350);
        assert!(m[0].reg_in);
        assert_eq!(m[1].gaze_ms, 300);
        assert!(m[1].first_pass_reg_out);
        assert_eq!(m[1].go_past_ms, 450);
        assert_eq!(m[1].right_bounded_ms, 300);
        assert!(!m[0].first_pass_reg_out);
        for w in &m {
            assert!(w.chain_holds());
        }
    }

    #[test]
    fn monotone_pass() {
        let m = compute_measures(&fx(&[(0, 120), (1, 200), (2, 310)]), 4);
        for w in &m[..3] {
            assert_eq!(w.gaze_ms, w.go_past_ms);
            assert_eq!(w.gaze_ms, w.right_bounded_ms);
            assert_eq!(w.gaze_ms, w.total_ms);
            assert_eq!(w.reread_ms, 0);
            assert!(w.first_pass_fixated && !w.first_pass_reg_out && !w.reg_in);
        }
        assert_eq!(m[3], WordMeasures::default());
    }

    #[test]
    fn skipped_word_entered_from_right() {
        let m = compute_measures(&fx(&[(0, 100), (2, 200), (1, 150)]), 3);
        assert!(!m[1].first_pass_fixated);
        assert_eq!(m[1].gaze_ms, 0);
        assert_eq!(m[1].total_ms, 150);
        assert_eq!(m[1].reread_ms, 150);
        assert!(m[1].reg_in);
        assert!(m[2].first_pass_reg_out);
    }

    #[test]
    fn dwell_threshold_and_sources() {
        // 300 ms on word 0, 400 ms on word 1, a 40 ms pass over word 3
        let t = trial(&[(0, 10.0), (300, 110.0), (700, 310.0), (740, 120.0), (900, 120.0)], 4);
        let f = detect_fixations(&t, &MeasureConfig::default());
        assert_eq!(f.len(), 2);
        assert_eq!((f[0].word, f[0].onset_ms, f[0].offset_ms), (0, 0, 300));
        assert_eq!((f[1].word, f[1].onset_ms, f[1].offset_ms, f[1].source), (1, 300, 900, Some(0)));
    }

    #[test]
    fn return_from_beyond_end_is_regression_in() {
        let t = trial(&[(0, 10.0), (200, 110.0), (400, 500.0), (600, 150.0), (800, 150.0)], 2);
        let f = detect_fixations(&t, &MeasureConfig::default());
        assert_eq!(f.len(), 3);
        assert_eq!(f[2].source, Some(2));
        let m = compute_measures(&f, 2);
        assert!(m[1].reg_in);
        assert_eq!(m[1].gaze_ms, 200);
        assert_eq!(m[1].total_ms, 400);
        assert!(!m[1].first_pass_reg_out);
    }

    #[test]
    fn no_hits_means_no_fixations() {
        let t = trial(&[(0, -50.0), (500, -60.0)], 3);
        assert!(detect_fixations(&t, &MeasureConfig::default()).is_empty());
    }

    #[test]
    fn validation_catches_bad_trials() {
        let mut t = trial(&[(0, 10.0), (0, 20.0)], 2);
        assert!(t.validate().is_err());
        t.samples[1].timestamp_ms = 5;
        t.word_boxes[1].x_min = 50.0;
        assert!(t.validate().is_err());
    }

    #[test]
    fn response_parsing_and_summary() {
        assert_eq!("I noticed an error".parse::<Response>().unwrap(), Response::Error);
        assert_eq!("Not sure".parse::<Response>().unwrap(), Response::Unsure);
        assert!("maybe".parse::<Response>().is_err());
        let mut ds = Dataset::default();
        for (i, r) in std::iter::repeat_n(Response::Ok, 10)
            .chain(std::iter::repeat_n(Response::Error, 5))
            .chain(std::iter::repeat_n(Response::Unsure, 5))
            .enumerate()
        {
            ds.trials.push(TrialInfo {
                participant: "p".into(),
                trial: i.to_string(),
                item: None,
                condition: Some("Typo".into()),
                variant: None,
                is_filler: false,
                response: Some(r),
                word_count: 1,
            });
        }
        let rows = response_summary(&ds);
        let p: Vec<f64> = rows.iter().map(|r| r.proportion).collect();
        assert_eq!(p, vec![0.5, 0.25, 0.25]);
    }

    #[test]
    fn quantile_type7() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert!((quantile_sorted(&v, 0.025) - 1.075).abs() < 1e-12);
    }
}
