//! Reading measures: golden trajectories, the duration chain on random
//! trials, exclusions, aggregation and file loading.

mod common;

use std::collections::{BTreeMap, HashMap};

use ncgp_core::measures::{
    aggregate, apply_exclusions, attach_regions, compute_measures, detect_fixations, load_trials, process_trials,
    quantile_sorted, response_summary, Dataset, MeasureConfig, Response, Sample, TrialInfo, TrialLog, WordBox,
    WordMeasures, WordRecord,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Deserialize)]
struct Golden {
    config: MeasureConfig,
    trial: TrialLog,
    expected: Vec<WordMeasures>,
}

fn golden(name: &str) -> Golden {
    let text = std::fs::read_to_string(common::fixture(&format!("measures/{name}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn golden_trajectories() {
    for name in ["linear_read", "regression", "skip_and_return"] {
        let g = golden(name);
        let fx = detect_fixations(&g.trial, &g.config);
        assert_eq!(compute_measures(&fx, g.trial.word_boxes.len()), g.expected, "{name}");
    }
}

#[test]
fn golden_fixation_sources() {
    let g = golden("skip_and_return");
    let fx = detect_fixations(&g.trial, &g.config);
    let seq: Vec<(usize, i64, Option<usize>)> = fx.iter().map(|f| (f.word, f.duration(), f.source)).collect();
    assert_eq!(seq, vec![(0, 200, None), (2, 550, Some(0)), (3, 200, Some(2)), (1, 200, Some(4))]);
}

#[test]
fn exclusive_edges_miss_boundary_samples() {
    let mut g = golden("linear_read");
    g.config.inclusive_edges = false;
    let ms = compute_measures(&detect_fixations(&g.trial, &g.config), 4);
    assert_eq!(ms[0].total_ms, 0);
    assert_eq!(ms[1].gaze_ms, 250);
}

fn layout(lines: usize, per_line: usize) -> Vec<WordBox> {
    (0..lines)
        .flat_map(|l| {
            (0..per_line).map(move |w| WordBox {
                x_min: w as f64 * 60.0,
                x_max: w as f64 * 60.0 + 50.0,
                y_min: l as f64 * 40.0,
                y_max: l as f64 * 40.0 + 30.0,
            })
        })
        .collect()
}

fn trial_strategy() -> impl Strategy<Value = TrialLog> {
    (1usize..=3, 1usize..=6, prop::collection::vec((1i64..250, -20.0f64..420.0, -20.0f64..150.0), 0..120)).prop_map(
        |(lines, per_line, steps)| {
            let mut t = 0;
            let samples = steps
                .into_iter()
                .map(|(dt, x, y)| {
                    t += dt;
                    Sample { timestamp_ms: t, x, y }
                })
                .collect();
            TrialLog {
                participant: "p".into(),
                trial: "t".into(),
                item: None,
                condition: None,
                variant: None,
                samples,
                word_boxes: layout(lines, per_line),
                response: None,
                is_filler: false,
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn duration_chain_holds(t in trial_strategy(), dwell in 0i64..300) {
        let cfg = MeasureConfig { min_dwell_ms: dwell, inclusive_edges: true };
        let fx = detect_fixations(&t, &cfg);
        for f in &fx {
            prop_assert!(f.offset_ms > f.onset_ms || dwell == 0);
            prop_assert!(f.duration() >= dwell);
        }
        for w in fx.windows(2) {
            prop_assert!(w[0].word != w[1].word || w[1].source == Some(t.word_boxes.len()));
        }
        let ms = compute_measures(&fx, t.word_boxes.len());
        for (w, m) in ms.iter().enumerate() {
            prop_assert!(m.chain_holds(), "word {}: {:?}", w, m);
            prop_assert!(m.reread_ms >= 0);
            if !fx.iter().any(|f| f.word == w) {
                prop_assert_eq!(*m, WordMeasures::default());
            }
        }
    }
}

#[test]
fn ten_thousand_random_trials_keep_the_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let cfg = MeasureConfig::default();
    for _ in 0..10_000 {
        let boxes = layout(rng.gen_range(1..=3), rng.gen_range(1..=6));
        let mut t = 0;
        let samples = (0..rng.gen_range(0..100))
            .map(|_| {
                t += rng.gen_range(1..220);
                Sample { timestamp_ms: t, x: rng.gen_range(-20.0..420.0), y: rng.gen_range(-20.0..150.0) }
            })
            .collect();
        let log = TrialLog {
            participant: "p".into(),
            trial: "t".into(),
            item: None,
            condition: None,
            variant: None,
            samples,
            word_boxes: boxes,
            response: None,
            is_filler: false,
        };
        let n = log.word_boxes.len();
        assert!(compute_measures(&detect_fixations(&log, &cfg), n).iter().all(|m| m.chain_holds()));
    }
}

#[test]
fn exclusion_fixture_hits_intended_records() {
    let ds = common::exclusion_dataset();
    let (kept, r) = apply_exclusions(&ds);
    assert_eq!(r.participants_excluded, ["p3"]);
    assert_eq!(r.trials_excluded, [("p1".to_string(), "e1".to_string())]);
    assert_eq!(r.words_flagged, [("p2".to_string(), "t12".to_string(), 0)]);
    assert_eq!((r.participant_rule_count, r.trial_rule_count, r.word_rule_count), (1, 1, 1));
    assert!(kept.trials.iter().all(|t| t.participant != "p3"));
    assert!(kept.trials.iter().any(|t| t.trial == "e2"));

    // threshold computed independently over the surviving population
    let gazes: Vec<f64> = kept
        .words
        .iter()
        .filter(|w| w.item.as_deref() == Some("it") && w.word_index == 0 && w.measures.gaze_ms > 0)
        .map(|w| w.measures.gaze_ms as f64)
        .collect();
    assert_eq!(gazes.len(), 12);
    let mean = gazes.iter().sum::<f64>() / 12.0;
    let sd = (gazes.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / 11.0).sqrt();
    assert!(2000.0 > mean + 3.0 * sd && 200.0 <= mean + 3.0 * sd);
}

#[test]
fn exclusions_are_idempotent() {
    let (once, _) = apply_exclusions(&common::exclusion_dataset());
    let (twice, r2) = apply_exclusions(&once);
    assert_eq!(once, twice);
    assert!(r2.participants_excluded.is_empty() && r2.trials_excluded.is_empty());
}

fn info(p: &str, t: &str, cond: Option<&str>, filler: bool, r: Response) -> TrialInfo {
    TrialInfo {
        participant: p.into(),
        trial: t.into(),
        item: cond.map(|_| t.to_string()),
        condition: cond.map(String::from),
        variant: cond.map(|_| 1),
        is_filler: filler,
        response: Some(r),
        word_count: 0,
    }
}

#[test]
fn nine_of_thirty_six_filler_errors_excludes() {
    let mut ds = Dataset::default();
    for f in 0..36 {
        let r = if f < 9 { Response::Error } else { Response::Ok };
        ds.trials.push(info("p", &format!("f{f}"), None, true, r));
    }
    let (_, r) = apply_exclusions(&ds);
    assert_eq!(r.participants_excluded, ["p"]);
}

#[test]
fn response_proportions() {
    let mut ds = Dataset::default();
    for i in 0..20 {
        let r = match i {
            0..=9 => Response::Ok,
            10..=14 => Response::Error,
            _ => Response::Unsure,
        };
        ds.trials.push(info("p", &format!("t{i}"), Some("Typo"), false, r));
    }
    ds.trials.push(info("p", "f", None, true, Response::Ok));
    let rows = response_summary(&ds);
    let typo: Vec<f64> = rows.iter().filter(|r| r.condition == "Typo").map(|r| r.proportion).collect();
    assert_eq!(typo, vec![0.5, 0.25, 0.25]);
    let filler: Vec<f64> = rows.iter().filter(|r| r.condition == "Filler").map(|r| r.proportion).collect();
    assert_eq!(filler, vec![1.0, 0.0, 0.0]);
}

fn record(p: &str, cond: &str, region: &str, gaze: i64) -> WordRecord {
    WordRecord {
        participant: p.into(),
        trial: format!("{p}-{cond}"),
        item: Some("i".into()),
        condition: Some(cond.into()),
        variant: Some(1),
        is_filler: false,
        word_index: 0,
        region: Some(region.into()),
        measures: WordMeasures { gaze_ms: gaze, total_ms: gaze, ..Default::default() },
        gaze_outlier: false,
    }
}

#[test]
fn aggregate_degenerate_and_grand_mean() {
    let mut ds = Dataset::default();
    for p in ["a", "b", "c"] {
        ds.words.push(record(p, "Plausible", "Predicate", 100));
    }
    ds.words.push(record("a", "Typo", "CriticalWord", 100));
    ds.words.push(record("b", "Typo", "CriticalWord", 200));
    let rows = aggregate(&ds, "gaze_ms", 500, 1).unwrap();
    let get = |c: &str, r: &str| rows.iter().find(|x| x.condition == c && x.region == r).unwrap();
    let flat = get("Plausible", "Predicate");
    assert_eq!((flat.mean, flat.ci_low, flat.ci_high, flat.n), (Some(100.0), Some(100.0), Some(100.0), 3));
    assert_eq!(get("Typo", "CriticalWord").mean, Some(150.0));
    let empty = get("Typo", "Predicate");
    assert_eq!((empty.mean, empty.ci_low, empty.n), (None, None, 0));
    assert!(aggregate(&ds, "nonsense", 10, 1).is_err());
}

#[test]
fn aggregate_matches_independent_bootstrap() {
    let mut ds = Dataset::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for p in 0..9 {
        for k in 0..rng.gen_range(1..5) {
            let mut r = record(&format!("p{p}"), "NeighborGP", "Predicate", rng.gen_range(100..900));
            r.word_index = k;
            ds.words.push(r);
        }
    }
    let b = 2000;
    let seed = 77;
    let rows = aggregate(&ds, "gaze_ms", b, seed).unwrap();
    // one cell, so stream 0; participants in sorted order
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for w in &ds.words {
        groups.entry(&w.participant).or_default().push(w.measures.gaze_ms as f64);
    }
    let groups: Vec<Vec<f64>> = groups.into_values().collect();
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    g.set_stream(0);
    let mut stats: Vec<f64> = (0..b)
        .map(|_| {
            let draw: Vec<&Vec<f64>> = (0..groups.len()).map(|_| &groups[g.gen_range(0..groups.len())]).collect();
            let all: Vec<f64> = draw.into_iter().flatten().copied().collect();
            all.iter().sum::<f64>() / all.len() as f64
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let pos = |q: f64| {
        let h = (stats.len() - 1) as f64 * q;
        let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
        stats[lo] + (h - lo as f64) * (stats[hi] - stats[lo])
    };
    assert!((rows[0].ci_low.unwrap() - pos(0.025)).abs() < 1e-9);
    assert!((rows[0].ci_high.unwrap() - pos(0.975)).abs() < 1e-9);
    assert_eq!(rows, aggregate(&ds, "gaze_ms", b, seed).unwrap());
}

#[test]
fn aggregate_skips_outliers_and_fillers() {
    let mut ds = Dataset::default();
    ds.words.push(record("a", "Plausible", "Predicate", 100));
    let mut out = record("b", "Plausible", "Predicate", 5000);
    out.gaze_outlier = true;
    ds.words.push(out);
    let mut filler = record("c", "Plausible", "Predicate", 7000);
    filler.is_filler = true;
    ds.words.push(filler);
    let rows = aggregate(&ds, "gaze_ms", 50, 0).unwrap();
    assert_eq!((rows[0].mean, rows[0].n), (Some(100.0), 1));
}

#[test]
fn quantiles_interpolate() {
    assert_eq!(quantile_sorted(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
    assert_eq!(quantile_sorted(&[5.0], 0.975), 5.0);
}

#[test]
fn csv_files_round_trip_through_pipeline() {
    let g = golden("regression");
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("samples.csv");
    let boxes = dir.path().join("boxes.csv");
    let responses = dir.path().join("responses.csv");
    let meta = dir.path().join("meta.csv");
    let mut s = String::from("participant,trial,timestamp_ms,x,y\n");
    // written out of order; the loader sorts by time
    for smp in g.trial.samples.iter().rev() {
        s += &format!("p1,t1,{},{},{}\n", smp.timestamp_ms, smp.x, smp.y);
    }
    std::fs::write(&samples, s).unwrap();
    let mut b = String::from("trial,word_index,x_min,x_max,y_min,y_max\n");
    for (i, w) in g.trial.word_boxes.iter().enumerate() {
        b += &format!("t1,{i},{},{},{},{}\n", w.x_min, w.x_max, w.y_min, w.y_max);
    }
    std::fs::write(&boxes, b).unwrap();
    std::fs::write(&responses, "participant,trial,response\np1,t1,I noticed an error\n").unwrap();
    std::fs::write(&meta, "trial,item,condition,variant,is_filler\nt1,item01,NeighborGP,1,0\n").unwrap();

    let logs = load_trials(&samples, &boxes, &responses, Some(&meta)).unwrap();
    assert_eq!(logs.len(), 1);
    assert_eq!(logs[0].response, Some(Response::Error));
    assert_eq!(logs[0].condition.as_deref(), Some("NeighborGP"));
    let mut ds = process_trials(&logs, &MeasureConfig::default()).unwrap();
    let measures: Vec<WordMeasures> = ds.words.iter().map(|w| w.measures).collect();
    assert_eq!(measures, g.expected);
    let regions = HashMap::from([(
        ("item01".to_string(), "NeighborGP".to_string(), 1u8),
        vec!["Preamble".to_string(), "CriticalWord".into(), "Intervening".into(), "Predicate".into()],
    )]);
    attach_regions(&mut ds, &regions);
    assert_eq!(ds.words[1].region.as_deref(), Some("CriticalWord"));
}

#[test]
fn overlapping_boxes_are_rejected() {
    let mut g = golden("linear_read");
    g.trial.word_boxes[1].x_min = 90.0;
    assert!(process_trials(&[g.trial], &MeasureConfig::default()).is_err());
}
