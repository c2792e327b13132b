//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use ncgp_core::lexicon::{build_vocabulary, words_of, FreqLoadOptions, Vocabulary};
use ncgp_core::measures::{Dataset, Response, TrialInfo, WordMeasures, WordRecord};
use ncgp_core::prior::{NGramModel, SmoothingConfig};
use ncgp_core::stimuli::{load_items, material_words, Item};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn items() -> Vec<Item> {
    load_items(&repo_root().join("data/items.json")).expect("bundled items load")
}

/// Vocabulary over the frequency list, every material word and the typo
/// forms, with a trigram model trained on the bundled corpus.
pub fn full_lm(items: &[Item]) -> (Arc<Vocabulary>, NGramModel) {
    let root = repo_root();
    let mut extra = material_words(items);
    for it in items {
        extra.extend(it.typo_pair.iter().cloned());
    }
    let vocab = Arc::new(
        build_vocabulary(&root.join("data/freq.tsv"), &extra, FreqLoadOptions::default()).unwrap(),
    );
    let corpus: Vec<Vec<String>> = std::fs::read_to_string(root.join("data/corpus.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(words_of)
        .collect();
    let lm = NGramModel::train(&corpus, vocab.clone(), 3, &SmoothingConfig::default()).unwrap();
    (vocab, lm)
}

/// Exact two-sided signed-rank p-value by enumerating all `2^n` sign
/// assignments of the ranks.
pub fn brute_force_wilcoxon(d: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = d.iter().copied().filter(|x| *x != 0.0).collect();
    let n = d.len();
    let ranks: Vec<f64> = d
        .iter()
        .map(|x| {
            let less = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
            let eq = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
            less + (eq + 1.0) / 2.0
        })
        .collect();
    let w: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let (mut lo, mut hi) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s <= w + 1e-9 {
            lo += 1;
        }
        if s >= w - 1e-9 {
            hi += 1;
        }
    }
    let total = (1u64 << n) as f64;
    (w, (2.0 * (lo.min(hi) as f64) / total).min(1.0))
}

fn trial(p: &str, t: &str, item: Option<&str>, filler: bool, response: Option<Response>, n: usize) -> TrialInfo {
    TrialInfo {
        participant: p.into(),
        trial: t.into(),
        item: item.map(String::from),
        condition: item.map(|_| "Plausible".to_string()),
        variant: item.map(|_| 1),
        is_filler: filler,
        response,
        word_count: n,
    }
}

fn word(t: &TrialInfo, i: usize, gaze: i64) -> WordRecord {
    WordRecord {
        participant: t.participant.clone(),
        trial: t.trial.clone(),
        item: t.item.clone(),
        condition: t.condition.clone(),
        variant: t.variant,
        is_filler: t.is_filler,
        word_index: i,
        region: None,
        measures: WordMeasures {
            first_fixation_ms: gaze,
            gaze_ms: gaze,
            go_past_ms: gaze,
            right_bounded_ms: gaze,
            total_ms: gaze,
            reread_ms: 0,
            first_pass_fixated: gaze > 0,
            first_pass_reg_out: false,
            reg_in: false,
        },
        gaze_outlier: false,
    }
}

/// Dataset built so each exclusion rule fires on exactly one target:
/// participant `p3` (2 of 5 filler errors), trial `p1/e1` (1 of 10 words
/// fixated) and word 0 of `p2/t12` (gaze 2000 against eleven 200s). `p1`
/// sits exactly on the filler boundary and `p1/e2` exactly on the fixation
/// boundary; both stay. `p3/x1` carries an extreme gaze that must not enter
/// the outlier population.
pub fn exclusion_dataset() -> Dataset {
    let mut ds = Dataset::default();
    let mut push = |t: TrialInfo, gazes: Vec<i64>| {
        for (i, g) in gazes.into_iter().enumerate() {
            ds.words.push(word(&t, i, g));
        }
        ds.trials.push(t);
    };
    for p in ["p1", "p2", "p3"] {
        let errors = match p {
            "p1" => 1,
            "p3" => 2,
            _ => 0,
        };
        for f in 0..5 {
            let r = if f < errors { Response::Error } else { Response::Ok };
            push(trial(p, &format!("f{}", f + 1), None, true, Some(r), 10), vec![200; 10]);
        }
    }
    let mut sparse = vec![0; 10];
    sparse[3] = 250;
    push(trial("p1", "e1", Some("it"), false, Some(Response::Ok), 10), sparse);
    let mut two = vec![0; 10];
    two[0] = 200;
    two[1] = 200;
    push(trial("p1", "e2", Some("other"), false, Some(Response::Ok), 10), two);
    for k in 1..=12 {
        let mut g = vec![200; 10];
        if k == 12 {
            g[0] = 2000;
        }
        push(trial("p2", &format!("t{k:02}"), Some("it"), false, Some(Response::Ok), 10), g);
    }
    let mut extreme = vec![200; 10];
    extreme[1] = 100_000;
    push(trial("p3", "x1", Some("it"), false, Some(Response::Ok), 10), extreme);
    ds
}
