//! The bundled experimental materials.

mod common;

use std::collections::HashSet;

use ncgp_core::lexicon::{build_vocabulary, FreqLoadOptions};
use ncgp_core::stimuli::{check_item, expand_all, material_words, validate_item, Condition, Region};

#[test]
fn items_are_well_formed() {
    let items = common::items();
    assert_eq!(items.len(), 36);
    let ids: HashSet<&str> = items.iter().map(|i| i.id.as_str()).collect();
    assert_eq!(ids.len(), 36);
    for it in &items {
        check_item(it).unwrap();
    }
}

#[test]
fn validation_against_frequency_list() {
    let items = common::items();
    let v = build_vocabulary(
        &common::repo_root().join("data/freq.tsv"),
        &material_words(&items),
        FreqLoadOptions::default(),
    )
    .unwrap();
    let mut report = Vec::new();
    for it in &items {
        for viol in validate_item(it, &v) {
            report.push(format!("{} {}: {}", viol.item, viol.field, viol.message));
        }
    }
    // genes/jeans is the paper's own pair and sits three edits apart
    assert_eq!(report.len(), 1, "{report:#?}");
    assert!(report[0].starts_with("item36 ") && report[0].contains("critical pair"), "{report:#?}");
}

#[test]
fn every_variant_has_one_span_per_region() {
    let variants = expand_all(&common::items()).unwrap();
    assert_eq!(variants.len(), 360);
    for v in &variants {
        for r in [Region::Preamble, Region::CriticalWord, Region::Intervening, Region::Predicate] {
            if r == Region::Preamble && v.span(r).is_none() {
                continue;
            }
            let (s, e) = v.span(r).unwrap();
            assert!(v.regions[s..e].iter().all(|x| *x == r), "{}", v.key());
        }
        if v.condition == Condition::Typo {
            let w = &v.words()[v.critical_index()];
            assert!(!w.is_empty());
        }
    }
}
