//! Experimental items, their ten condition variants and the Latin-square
//! rotation into presentation lists.
//!
//! An item has two critical words that are orthographic neighbours, each
//! with a matching predicate. Crossing critical words with predicates gives
//! the plausible and neighbour garden-path sentences; typo, unrelated-word and
//! late-error variants are built from the same preamble and intervening
//! material.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{edit_distance, tokenize, Vocabulary};

/// Variants per item: five conditions, two critical-word versions each.
pub const VARIANTS_PER_ITEM: usize = 10;
/// Largest edit distance at which two critical words count as neighbours.
pub const NEIGHBOR_THRESHOLD: usize = 2;

#[derive(Debug, Error)]
pub enum StimuliError {
    #[error("item {item}: invalid {field}: {reason}")]
    Invalid {
        item: String,
        field: &'static str,
        reason: String,
    },
    #[error("expected {expected} items, found {found}")]
    ItemCount { expected: usize, found: usize },
    #[error("duplicate item id {0}")]
    DuplicateId(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid item file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub preamble: String,
    pub critical_pair: [String; 2],
    pub typo_pair: [String; 2],
    pub unrelated_word: String,
    pub intervening: String,
    /// `predicate_pair[i]` is the plausible continuation for `critical_pair[i]`.
    pub predicate_pair: [String; 2],
    pub late_predicate: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    Plausible,
    NeighborGP,
    Typo,
    UnrelatedGP,
    LateError,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::Plausible,
        Condition::NeighborGP,
        Condition::Typo,
        Condition::UnrelatedGP,
        Condition::LateError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Plausible => "Plausible",
            Condition::NeighborGP => "NeighborGP",
            Condition::Typo => "Typo",
            Condition::UnrelatedGP => "UnrelatedGP",
            Condition::LateError => "LateError",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(&key))
            .ok_or_else(|| format!("unknown condition {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    Preamble,
    CriticalWord,
    Intervening,
    Predicate,
}

impl Region {
    pub const ALL: [Region; 4] = [
        Region::Preamble,
        Region::CriticalWord,
        Region::Intervening,
        Region::Predicate,
    ];
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// One sentence of an item in one condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionVariant {
    pub item: String,
    pub condition: Condition,
    /// 1 or 2: which critical word the variant is built on.
    pub variant: u8,
    /// Whitespace tokens as displayed, punctuation attached.
    pub tokens: Vec<String>,
    /// Region of each token.
    pub regions: Vec<Region>,
}

impl ConditionVariant {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Normalized words as seen by the models.
    pub fn words(&self) -> Vec<String> {
        tokenize(&self.text()).into_iter().map(|t| t.word).collect()
    }

    /// Half-open token range of a region.
    pub fn span(&self, r: Region) -> Option<(usize, usize)> {
        let start = self.regions.iter().position(|x| *x == r)?;
        let end = self.regions.iter().rposition(|x| *x == r)? + 1;
        Some((start, end))
    }

    pub fn critical_index(&self) -> usize {
        self.span(Region::CriticalWord).map(|s| s.0).unwrap_or(0)
    }

    /// Index among the ten variants of an item, 1-based:
    /// P1 P2 NGP1 NGP2 T1 T2 U1 U2 L1 L2.
    pub fn variant_index(&self) -> usize {
        variant_index(self.condition, self.variant)
    }

    pub fn key(&self) -> String {
        format!("{}:{}:{}", self.item, self.condition, self.variant)
    }
}

pub fn variant_index(c: Condition, variant: u8) -> usize {
    let pos = Condition::ALL.iter().position(|x| *x == c).unwrap_or(0);
    2 * pos + variant as usize
}

/// Inverse of [`variant_index`].
pub fn variant_of_index(index: usize) -> (Condition, u8) {
    let i = index - 1;
    (Condition::ALL[i / 2], (i % 2 + 1) as u8)
}

fn invalid(item: &Item, field: &'static str, reason: impl Into<String>) -> StimuliError {
    StimuliError::Invalid {
        item: item.id.clone(),
        field,
        reason: reason.into(),
    }
}

fn single_word(s: &str) -> bool {
    s.split_whitespace().count() == 1
}

/// Structural checks that do not need a vocabulary.
pub fn check_item(item: &Item) -> Result<(), StimuliError> {
    if item.id.trim().is_empty() {
        return Err(invalid(item, "id", "empty"));
    }
    for (field, s) in [
        ("preamble", &item.preamble),
        ("intervening", &item.intervening),
        ("late_predicate", &item.late_predicate),
        ("predicate_pair", &item.predicate_pair[0]),
        ("predicate_pair", &item.predicate_pair[1]),
    ] {
        if s.trim().is_empty() {
            return Err(invalid(item, field, "empty span"));
        }
    }
    for (field, w) in [
        ("critical_pair", &item.critical_pair[0]),
        ("critical_pair", &item.critical_pair[1]),
        ("typo_pair", &item.typo_pair[0]),
        ("typo_pair", &item.typo_pair[1]),
        ("unrelated_word", &item.unrelated_word),
    ] {
        if !single_word(w) {
            return Err(invalid(item, field, format!("{w:?} is not a single word")));
        }
    }
    let [a, b] = &item.critical_pair;
    if a.to_lowercase() == b.to_lowercase() {
        return Err(invalid(item, "critical_pair", "critical words are identical"));
    }
    for i in 0..2 {
        let d = edit_distance(&item.critical_pair[i].to_lowercase(), &item.typo_pair[i].to_lowercase());
        if d != 1 {
            return Err(invalid(
                item,
                "typo_pair",
                format!(
                    "{:?} is {d} edits from {:?}, expected 1",
                    item.typo_pair[i], item.critical_pair[i]
                ),
            ));
        }
    }
    Ok(())
}

fn build(item: &Item, condition: Condition, variant: u8, critical: &str, predicate: &str) -> ConditionVariant {
    let mut tokens = Vec::new();
    let mut regions = Vec::new();
    for (r, span) in [
        (Region::Preamble, item.preamble.as_str()),
        (Region::CriticalWord, critical),
        (Region::Intervening, item.intervening.as_str()),
        (Region::Predicate, predicate),
    ] {
        for t in span.split_whitespace() {
            tokens.push(t.to_string());
            regions.push(r);
        }
    }
    ConditionVariant {
        item: item.id.clone(),
        condition,
        variant,
        tokens,
        regions,
    }
}

/// The ten variants of an item in rotation order.
pub fn expand_item(item: &Item) -> Result<Vec<ConditionVariant>, StimuliError> {
    check_item(item)?;
    let [a, b] = &item.critical_pair;
    let [ta, tb] = &item.typo_pair;
    let [pa, pb] = &item.predicate_pair;
    let u = &item.unrelated_word;
    let l = &item.late_predicate;
    use Condition::*;
    Ok(vec![
        build(item, Plausible, 1, a, pa),
        build(item, Plausible, 2, b, pb),
        build(item, NeighborGP, 1, b, pa),
        build(item, NeighborGP, 2, a, pb),
        build(item, Typo, 1, ta, pa),
        build(item, Typo, 2, tb, pb),
        build(item, UnrelatedGP, 1, u, pa),
        build(item, UnrelatedGP, 2, u, pb),
        build(item, LateError, 1, a, l),
        build(item, LateError, 2, b, l),
    ])
}

/// Expands every item, preserving order.
pub fn expand_all(items: &[Item]) -> Result<Vec<ConditionVariant>, StimuliError> {
    let mut out = Vec::with_capacity(items.len() * VARIANTS_PER_ITEM);
    for it in items {
        out.extend(expand_item(it)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub item: String,
    pub condition: Condition,
    pub variant: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentList {
    /// 1..=10.
    pub list: usize,
    pub assignments: Vec<Assignment>,
}

/// Latin-square rotation: list `l` (1-based) gives the `k`-th item (0-based,
/// file order) variant `((k + l) mod 10) + 1`. The seed only shuffles the
/// presentation order inside each list.
pub fn generate_lists(
    items: &[Item],
    seed: u64,
    expected_items: Option<usize>,
) -> Result<Vec<ExperimentList>, StimuliError> {
    if let Some(n) = expected_items {
        if n != items.len() {
            return Err(StimuliError::ItemCount {
                expected: n,
                found: items.len(),
            });
        }
    }
    let mut seen = std::collections::HashSet::new();
    for it in items {
        check_item(it)?;
        if !seen.insert(it.id.as_str()) {
            return Err(StimuliError::DuplicateId(it.id.clone()));
        }
    }
    Ok((1..=VARIANTS_PER_ITEM)
        .map(|l| {
            let mut assignments: Vec<Assignment> = items
                .iter()
                .enumerate()
                .map(|(k, it)| {
                    let (condition, variant) = variant_of_index((k + l) % VARIANTS_PER_ITEM + 1);
                    Assignment {
                        item: it.id.clone(),
                        condition,
                        variant,
                    }
                })
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (l as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            assignments.shuffle(&mut rng);
            ExperimentList { list: l, assignments }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub item: String,
    pub field: String,
    pub message: String,
}

/// Checks an item against a vocabulary. Returns every violation found.
pub fn validate_item(item: &Item, v: &Vocabulary) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: &str, message: String| {
        out.push(Violation {
            item: item.id.clone(),
            field: field.to_string(),
            message,
        })
    };
    if let Err(StimuliError::Invalid { field, reason, .. }) = check_item(item) {
        push(field, reason);
    }
    for (i, t) in item.typo_pair.iter().enumerate() {
        if v.contains(t) {
            push("typo_pair", format!("typo form is in vocabulary: {t:?} (variant {})", i + 1));
        }
    }
    let mut spans: Vec<(&str, &str)> = vec![
        ("preamble", &item.preamble),
        ("critical_pair", &item.critical_pair[0]),
        ("critical_pair", &item.critical_pair[1]),
        ("unrelated_word", &item.unrelated_word),
        ("intervening", &item.intervening),
        ("late_predicate", &item.late_predicate),
    ];
    spans.push(("predicate_pair", &item.predicate_pair[0]));
    spans.push(("predicate_pair", &item.predicate_pair[1]));
    for (field, s) in spans {
        for tok in tokenize(s) {
            if !v.contains(&tok.word) {
                push(field, format!("word not in vocabulary: {:?}", tok.word));
            }
        }
    }
    let a = item.critical_pair[0].to_lowercase();
    let b = item.critical_pair[1].to_lowercase();
    let d = edit_distance(&a, &b);
    if d > NEIGHBOR_THRESHOLD {
        push(
            "critical_pair",
            format!("critical pair not orthographic neighbors ({a:?}, {b:?} differ by {d} edits)"),
        );
    }
    let u = item.unrelated_word.to_lowercase();
    if edit_distance(&u, &a) <= NEIGHBOR_THRESHOLD || edit_distance(&u, &b) <= NEIGHBOR_THRESHOLD {
        push(
            "unrelated_word",
            format!("unrelated word {u:?} is an orthographic neighbor of a critical word"),
        );
    }
    out
}

pub fn load_items(path: &Path) -> Result<Vec<Item>, StimuliError> {
    let text = std::fs::read_to_string(path).map_err(|source| StimuliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_items(&text)
}

pub fn parse_items(text: &str) -> Result<Vec<Item>, StimuliError> {
    Ok(serde_json::from_str(text)?)
}

/// Every word any variant of the items can show, normalized.
pub fn material_words(items: &[Item]) -> Vec<String> {
    let mut words = std::collections::BTreeSet::new();
    for it in items {
        let spans = [
            &it.preamble,
            &it.critical_pair[0],
            &it.critical_pair[1],
            &it.unrelated_word,
            &it.intervening,
            &it.predicate_pair[0],
            &it.predicate_pair[1],
            &it.late_predicate,
        ];
        for s in spans {
            words.extend(tokenize(s).into_iter().map(|t| t.word));
        }
    }
    words.into_iter().collect()
}

/// CSV row for variant export; spans are half-open token ranges `start-end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub item: String,
    pub condition: Condition,
    pub variant: u8,
    pub sentence: String,
    pub preamble: String,
    pub critical: String,
    pub intervening: String,
    pub predicate: String,
}

impl From<&ConditionVariant> for VariantRow {
    fn from(v: &ConditionVariant) -> Self {
        let span = |r| {
            v.span(r)
                .map(|(s, e)| format!("{s}-{e}"))
                .unwrap_or_default()
        };
        VariantRow {
            item: v.item.clone(),
            condition: v.condition,
            variant: v.variant,
            sentence: v.text(),
            preamble: span(Region::Preamble),
            critical: span(Region::CriticalWord),
            intervening: span(Region::Intervening),
            predicate: span(Region::Predicate),
        }
    }
}

/// CSV row for list export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListRow {
    pub list: usize,
    pub item: String,
    pub condition: Condition,
    pub variant: u8,
}

pub fn list_rows(lists: &[ExperimentList]) -> Vec<ListRow> {
    lists
        .iter()
        .flat_map(|l| {
            l.assignments.iter().map(move |a| ListRow {
                list: l.list,
                item: a.item.clone(),
                condition: a.condition,
                variant: a.variant,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn boy() -> Item {
        Item {
            id: "boy".into(),
            preamble: "The boy".into(),
            critical_pair: ["kicked".into(), "licked".into()],
            typo_pair: ["kjcked".into(), "ljcked".into()],
            unrelated_word: "read".into(),
            intervening: "the big round".into(),
            predicate_pair: ["ball into the net.".into(), "lollipop with delight.".into()],
            late_predicate: "breath after the run.".into(),
        }
    }

    fn find(vs: &[ConditionVariant], c: Condition, v: u8) -> &ConditionVariant {
        vs.iter().find(|x| x.condition == c && x.variant == v).unwrap()
    }

    #[test]
    fn table_examples() {
        let vs = expand_item(&boy()).unwrap();
        assert_eq!(vs.len(), 10);
        assert_eq!(
            find(&vs, Condition::NeighborGP, 1).text(),
            "The boy licked the big round ball into the net."
        );
        assert_eq!(
            find(&vs, Condition::Typo, 1).text(),
            "The boy kjcked the big round ball into the net."
        );
        assert_eq!(
            find(&vs, Condition::LateError, 2).text(),
            "The boy licked the big round breath after the run."
        );
    }

    #[test]
    fn counterbalancing() {
        let vs = expand_item(&boy()).unwrap();
        let core: Vec<&ConditionVariant> = vs
            .iter()
            .filter(|v| matches!(v.condition, Condition::Plausible | Condition::NeighborGP))
            .collect();
        for w in ["kicked", "licked"] {
            assert_eq!(core.iter().filter(|v| v.tokens[2] == w).count(), 2);
        }
        for p in ["ball", "lollipop"] {
            assert_eq!(core.iter().filter(|v| v.tokens[6] == p).count(), 2);
        }
    }

    #[test]
    fn prefix_identity_and_regions() {
        let vs = expand_item(&boy()).unwrap();
        let p1 = find(&vs, Condition::Plausible, 1);
        let n2 = find(&vs, Condition::NeighborGP, 2);
        let (_, end) = p1.span(Region::Intervening).unwrap();
        assert_eq!(p1.tokens[..end], n2.tokens[..end]);
        assert_eq!(p1.span(Region::CriticalWord), Some((2, 3)));
        assert_eq!(p1.span(Region::Predicate), Some((6, 10)));
        assert_eq!(p1.critical_index(), 2);
    }

    #[test]
    fn variant_index_round_trip() {
        for i in 1..=10 {
            let (c, v) = variant_of_index(i);
            assert_eq!(variant_index(c, v), i);
        }
        assert_eq!(variant_of_index(3), (Condition::NeighborGP, 1));
    }

    #[test]
    fn structural_violations() {
        let mut it = boy();
        it.critical_pair[1] = "kicked".into();
        assert!(matches!(
            expand_item(&it),
            Err(StimuliError::Invalid { field: "critical_pair", .. })
        ));
        let mut it = boy();
        it.intervening = "  ".into();
        assert!(matches!(
            expand_item(&it),
            Err(StimuliError::Invalid { field: "intervening", .. })
        ));
        let mut it = boy();
        it.typo_pair[0] = "kxxked".into();
        assert!(matches!(
            expand_item(&it),
            Err(StimuliError::Invalid { field: "typo_pair", .. })
        ));
    }

    fn vocab_for(items: &[Item], extra: &[&str]) -> Vocabulary {
        let mut words = material_words(items);
        words.extend(extra.iter().map(|s| s.to_string()));
        Vocabulary::from_counts(words.into_iter().map(|w| (w, 1u64)), "t").unwrap()
    }

    #[test]
    fn validation_reports() {
        let it = boy();
        let v = vocab_for(std::slice::from_ref(&it), &[]);
        assert!(validate_item(&it, &v).is_empty());

        let mut bad = boy();
        bad.typo_pair[1] = "licked".into();
        let msgs: Vec<String> = validate_item(&bad, &v).into_iter().map(|x| x.message).collect();
        assert!(msgs.iter().any(|m| m.starts_with("typo form is in vocabulary")));

        let mut far = boy();
        far.critical_pair[1] = "read".into();
        let v = vocab_for(&[far.clone()], &[]);
        let msgs: Vec<String> = validate_item(&far, &v).into_iter().map(|x| x.message).collect();
        assert!(msgs.iter().any(|m| m.starts_with("critical pair not orthographic neighbors")));
    }

    #[test]
    fn lists_rotate_and_cover() {
        let items: Vec<Item> = (0..10)
            .map(|k| Item {
                id: format!("i{k}"),
                ..boy()
            })
            .collect();
        let lists = generate_lists(&items, 7, Some(10)).unwrap();
        // independent table: list l, item k -> variant (k + l) % 10 + 1
        for l in &lists {
            for a in &l.assignments {
                let k: usize = a.item[1..].parse().unwrap();
                assert_eq!(variant_index(a.condition, a.variant), (k + l.list) % 10 + 1);
            }
        }
        assert!(matches!(
            generate_lists(&items, 7, Some(36)),
            Err(StimuliError::ItemCount { .. })
        ));
        let again = generate_lists(&items, 7, Some(10)).unwrap();
        assert_eq!(lists, again);
    }

    #[test]
    fn condition_parsing() {
        assert_eq!("Neighbor-GP".parse::<Condition>().unwrap(), Condition::NeighborGP);
        assert_eq!("late_error".parse::<Condition>().unwrap(), Condition::LateError);
        assert!("other".parse::<Condition>().is_err());
    }
}
