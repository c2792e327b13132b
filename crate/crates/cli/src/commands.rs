//! Subcommand implementations.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use ncgp_core::lexicon::{build_vocabulary, words_of, FreqLoadOptions, Vocabulary};
use ncgp_core::math::total_variation;
use ncgp_core::measures::{
    aggregate, apply_exclusions, attach_regions, load_trials, process_trials, response_summary, Dataset,
    MEASURE_NAMES,
};
use ncgp_core::noise::NoiseModel;
use ncgp_core::pmi::{run_pmi, LookupOracle, MaskedOracle, RemoteMaskedOracle};
use ncgp_core::prior::{NGramModel, PriorModel, RemotePrior, SmoothingConfig};
use ncgp_core::service::ServiceClient;
use ncgp_core::smc::{Engine, PosteriorSummary, SummaryRow, DEFAULT_ENUMERATION_BUDGET, SCHEMA_VERSION};
use ncgp_core::stimuli::{expand_all, generate_lists, list_rows, load_items, material_words, validate_item, Item, VariantRow};
use ncgp_core::toy::ToyWorld;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{parse_prior, require_file, service_url, PriorSpec, RunConfig};
use crate::output::{file_stem, write_csv, write_json};
use crate::{InputArgs, ModelArgs};

const DEFAULT_TIMEOUT_SECS: u64 = 60;

pub struct Sentence {
    pub id: String,
    pub words: Vec<String>,
}

struct Inputs {
    sentences: Vec<Sentence>,
    toy: Option<ToyWorld>,
    /// Words the vocabulary must contain besides the frequency list.
    extra_words: Vec<String>,
}

fn load_inputs(a: &InputArgs) -> Result<Inputs> {
    if let Some(p) = &a.items {
        require_file(p, "items file")?;
        let items = load_items(p).with_context(|| format!("loading {}", p.display()))?;
        let sentences = expand_all(&items)?
            .into_iter()
            .map(|v| Sentence {
                id: v.key(),
                words: v.words(),
            })
            .collect();
        return Ok(Inputs {
            sentences,
            toy: None,
            extra_words: material_words(&items),
        });
    }
    if let Some(p) = &a.toy {
        require_file(p, "toy world")?;
        let world = ToyWorld::load(p)?;
        let sentences = world
            .items
            .iter()
            .map(|s| Sentence {
                id: s.id.clone(),
                words: s.words(),
            })
            .collect();
        let extra_words = world.vocabulary().words().to_vec();
        return Ok(Inputs {
            sentences,
            toy: Some(world),
            extra_words,
        });
    }
    if let Some(p) = &a.sentences {
        require_file(p, "sentence file")?;
        let text = std::fs::read_to_string(p)?;
        let mut sentences = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, body) = match line.split_once('\t') {
                Some((id, body)) => (id.trim().to_string(), body),
                None => (format!("s{:04}", i + 1), line),
            };
            sentences.push(Sentence {
                id,
                words: words_of(body),
            });
        }
        let extra_words = sentences.iter().flat_map(|s| s.words.clone()).collect();
        return Ok(Inputs {
            sentences,
            toy: None,
            extra_words,
        });
    }
    bail!("no input: pass --items, --toy or --sentences")
}

fn client(cfg: &RunConfig, url: &str) -> ServiceClient {
    ServiceClient::new(url, Duration::from_secs(cfg.timeout_secs.unwrap_or(DEFAULT_TIMEOUT_SECS)))
}

fn resolve_prior(m: &ModelArgs, cfg: &RunConfig, inputs: &Inputs) -> Result<(Box<dyn PriorModel>, Arc<Vocabulary>)> {
    let spec = m.prior.clone().or_else(|| cfg.prior.clone());
    match spec.map(|s| parse_prior(&s, cfg)).transpose()? {
        Some(PriorSpec::Ngram(path)) => {
            require_file(&path, "n-gram model")?;
            let model = NGramModel::from_json(&std::fs::read_to_string(&path)?)
                .with_context(|| format!("loading {}", path.display()))?;
            let v = model.vocab_arc();
            Ok((Box::new(model), v))
        }
        Some(PriorSpec::Service(url)) => {
            let vocab = match m.vocab.clone().or_else(|| cfg.vocab.clone()) {
                Some(freq) => {
                    require_file(&freq, "frequency list")?;
                    Arc::new(build_vocabulary(&freq, &inputs.extra_words, FreqLoadOptions::default())?)
                }
                None => match &inputs.toy {
                    Some(w) => Arc::new(w.vocabulary()),
                    None => bail!("a service prior needs --vocab (or `vocab` in the config)"),
                },
            };
            info!("using service prior at {url} over {} words", vocab.len());
            Ok((Box::new(RemotePrior::new(client(cfg, &url), vocab.clone(), vec![])), vocab))
        }
        None => match &inputs.toy {
            Some(w) => {
                let built = w.build()?;
                Ok((Box::new(built.prior), built.vocab))
            }
            None => bail!("no prior: pass --prior ngram:PATH or --prior service:URL"),
        },
    }
}

fn noise_for(cfg: &RunConfig, vocab: Arc<Vocabulary>) -> Result<NoiseModel> {
    Ok(NoiseModel::new(vocab, cfg.noise.clone(), cfg.action_prior())?)
}

fn apply_model_flags(m: &ModelArgs, cfg: &mut RunConfig) {
    if let Some(k) = m.particles {
        cfg.inference.num_particles = k;
    }
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j);
    }
    Ok(b.build()?)
}

#[derive(Serialize)]
struct RunMeta<'a> {
    schema_version: u32,
    command: &'a str,
    seed: Option<u64>,
    sentences: usize,
    config: &'a RunConfig,
}

fn write_summaries(out: &Path, summaries: &[PosteriorSummary]) -> Result<()> {
    let dir = out.join("summaries");
    for s in summaries {
        write_json(&dir.join(format!("{}.json", file_stem(&s.sentence_id))), s)?;
    }
    let rows: Vec<SummaryRow> = summaries.iter().flat_map(|s| s.rows()).collect();
    write_csv(&out.join("summary.csv"), &rows)
}

pub fn infer(input: &InputArgs, m: &ModelArgs, mut cfg: RunConfig, seed: Option<u64>, out: &Path, jobs: Option<usize>) -> Result<()> {
    apply_model_flags(m, &mut cfg);
    let seed = cfg.require_seed(seed)?;
    cfg.seed = Some(seed);
    let inputs = load_inputs(input)?;
    if inputs.sentences.is_empty() {
        bail!("input holds no sentences");
    }
    let (prior, vocab) = resolve_prior(m, &cfg, &inputs)?;
    let noise = noise_for(&cfg, vocab)?;
    let engine = Engine::new(prior.as_ref(), &noise, cfg.inference.clone())?;
    info!("inferring {} sentences with K={}", inputs.sentences.len(), cfg.inference.num_particles);
    let summaries: Vec<PosteriorSummary> = pool(jobs.or(cfg.jobs))?.install(|| {
        inputs
            .sentences
            .par_iter()
            .map(|s| {
                engine
                    .run(&s.id, &s.words, seed)
                    .map(|o| o.summary)
                    .map_err(|e| anyhow!("sentence {}: {e}", s.id))
            })
            .collect::<Result<_>>()
    })?;
    write_summaries(out, &summaries)?;
    write_json(
        &out.join("run.json"),
        &RunMeta {
            schema_version: SCHEMA_VERSION,
            command: "infer",
            seed: Some(seed),
            sentences: summaries.len(),
            config: &cfg,
        },
    )?;
    println!("wrote {} summaries to {}", summaries.len(), out.display());
    Ok(())
}

pub fn oracle(input: &InputArgs, m: &ModelArgs, cfg: RunConfig, out: &Path, jobs: Option<usize>) -> Result<()> {
    let inputs = load_inputs(input)?;
    if inputs.sentences.is_empty() {
        bail!("input holds no sentences");
    }
    let (prior, vocab) = resolve_prior(m, &cfg, &inputs)?;
    let noise = noise_for(&cfg, vocab)?;
    let engine = Engine::new(prior.as_ref(), &noise, cfg.inference.clone())?;
    let budget = cfg.budget.unwrap_or(DEFAULT_ENUMERATION_BUDGET);
    let summaries: Vec<PosteriorSummary> = pool(jobs.or(cfg.jobs))?.install(|| {
        inputs
            .sentences
            .par_iter()
            .map(|s| {
                engine
                    .exact(&s.id, &s.words, budget)
                    .map_err(|e| anyhow!("sentence {}: {e}", s.id))
            })
            .collect::<Result<_>>()
    })?;
    write_summaries(out, &summaries)?;
    write_json(
        &out.join("run.json"),
        &RunMeta {
            schema_version: SCHEMA_VERSION,
            command: "oracle",
            seed: None,
            sentences: summaries.len(),
            config: &cfg,
        },
    )?;
    println!("wrote {} exact summaries to {}", summaries.len(), out.display());
    Ok(())
}

fn read_summaries(dir: &Path) -> Result<BTreeMap<String, PosteriorSummary>> {
    let sub = dir.join("summaries");
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(&sub).with_context(|| format!("reading {}", sub.display()))? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "json") {
            let s: PosteriorSummary = serde_json::from_str(&std::fs::read_to_string(&p)?)
                .with_context(|| format!("parsing {}", p.display()))?;
            if s.schema_version != SCHEMA_VERSION {
                bail!("{}: schema version {} (expected {SCHEMA_VERSION})", p.display(), s.schema_version);
            }
            out.insert(s.sentence_id.clone(), s);
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CompareRow {
    pub sentence_id: String,
    pub word_index: usize,
    pub action_tv: f64,
    pub surprisal_diff_bits: f64,
}

pub fn compare(reference: &Path, candidate: &Path, out: &Path) -> Result<()> {
    let a = read_summaries(reference)?;
    let b = read_summaries(candidate)?;
    let mut rows = Vec::new();
    for (id, r) in &a {
        let Some(c) = b.get(id) else {
            bail!("sentence {id} missing from {}", candidate.display());
        };
        if r.words != c.words {
            bail!("sentence {id}: word sequences differ");
        }
        for t in 0..r.words.len() {
            rows.push(CompareRow {
                sentence_id: id.clone(),
                word_index: t,
                action_tv: total_variation(&r.action_posterior[t], &c.action_posterior[t]),
                surprisal_diff_bits: c.surprisal_trace[t] - r.surprisal_trace[t],
            });
        }
    }
    write_csv(&out.join("compare.csv"), &rows)?;
    let max = rows.iter().map(|r| r.action_tv).fold(0.0, f64::max);
    let mean = rows.iter().map(|r| r.action_tv).sum::<f64>() / rows.len().max(1) as f64;
    println!("{} sentences, {} positions: max TV {max:.6}, mean TV {mean:.6}", a.len(), rows.len());
    Ok(())
}

/// Per-word region labels for every variant of the items.
fn region_map(items: &[Item]) -> Result<HashMap<(String, String, u8), Vec<String>>> {
    Ok(expand_all(items)?
        .into_iter()
        .map(|v| {
            let r = v.regions.iter().map(|r| r.to_string()).collect();
            ((v.item.clone(), v.condition.to_string(), v.variant), r)
        })
        .collect())
}

#[derive(Debug, Serialize)]
struct WordRow<'a> {
    participant: &'a str,
    trial: &'a str,
    item: Option<&'a str>,
    condition: Option<&'a str>,
    variant: Option<u8>,
    is_filler: bool,
    word_index: usize,
    region: Option<&'a str>,
    first_fixation_ms: i64,
    gaze_ms: i64,
    go_past_ms: i64,
    right_bounded_ms: i64,
    total_ms: i64,
    reread_ms: i64,
    first_pass_fixated: bool,
    first_pass_reg_out: bool,
    reg_in: bool,
    gaze_outlier: bool,
}

fn word_rows(ds: &Dataset) -> Vec<WordRow<'_>> {
    ds.words
        .iter()
        .map(|w| WordRow {
            participant: &w.participant,
            trial: &w.trial,
            item: w.item.as_deref(),
            condition: w.condition.as_deref(),
            variant: w.variant,
            is_filler: w.is_filler,
            word_index: w.word_index,
            region: w.region.as_deref(),
            first_fixation_ms: w.measures.first_fixation_ms,
            gaze_ms: w.measures.gaze_ms,
            go_past_ms: w.measures.go_past_ms,
            right_bounded_ms: w.measures.right_bounded_ms,
            total_ms: w.measures.total_ms,
            reread_ms: w.measures.reread_ms,
            first_pass_fixated: w.measures.first_pass_fixated,
            first_pass_reg_out: w.measures.first_pass_reg_out,
            reg_in: w.measures.reg_in,
            gaze_outlier: w.gaze_outlier,
        })
        .collect()
}

pub struct MeasureFiles {
    pub samples: PathBuf,
    pub boxes: PathBuf,
    pub responses: PathBuf,
    pub meta: Option<PathBuf>,
    pub items: Option<PathBuf>,
}

pub fn measures(f: &MeasureFiles, cfg: RunConfig, out: &Path) -> Result<()> {
    require_file(&f.samples, "sample file")?;
    require_file(&f.boxes, "word-box file")?;
    require_file(&f.responses, "response file")?;
    if let Some(m) = &f.meta {
        require_file(m, "trial metadata file")?;
    }
    let logs = load_trials(&f.samples, &f.boxes, &f.responses, f.meta.as_deref())?;
    let mut ds = process_trials(&logs, &cfg.measures)?;
    if let Some(p) = &f.items {
        require_file(p, "items file")?;
        attach_regions(&mut ds, &region_map(&load_items(p)?)?);
    }
    let (kept, report) = apply_exclusions(&ds);
    write_csv(&out.join("words_raw.csv"), &word_rows(&ds))?;
    write_csv(&out.join("words.csv"), &word_rows(&kept))?;
    write_json(&out.join("exclusions.json"), &report)?;
    write_json(&out.join("dataset.json"), &kept)?;
    println!(
        "{} trials: excluded {} participants, {} trials, flagged {} gaze outliers",
        ds.trials.len(),
        report.participant_rule_count,
        report.trial_rule_count,
        report.word_rule_count
    );
    Ok(())
}

pub fn aggregate_cmd(dataset: &Path, names: &[String], cfg: RunConfig, seed: Option<u64>, out: &Path) -> Result<()> {
    require_file(dataset, "dataset")?;
    let seed = cfg.require_seed(seed)?;
    let ds: Dataset = serde_json::from_str(&std::fs::read_to_string(dataset)?)
        .with_context(|| format!("parsing {}", dataset.display()))?;
    let b = cfg.bootstrap.unwrap_or(2000);
    let names: Vec<String> = if names.is_empty() {
        MEASURE_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        names.to_vec()
    };
    let mut rows = Vec::new();
    for n in &names {
        rows.extend(aggregate(&ds, n, b, seed)?);
    }
    write_csv(&out.join("aggregate.csv"), &rows)?;
    write_csv(&out.join("responses.csv"), &response_summary(&ds))?;
    println!("wrote {} aggregate rows (B={b}, seed {seed})", rows.len());
    Ok(())
}

pub fn pmi(items_path: &Path, oracle_spec: Option<&str>, cfg: RunConfig, out: &Path) -> Result<()> {
    require_file(items_path, "items file")?;
    let items = load_items(items_path)?;
    let oracle: Box<dyn MaskedOracle> = match oracle_spec {
        Some(s) if s.starts_with("lookup:") => {
            let p = Path::new(&s["lookup:".len()..]);
            require_file(p, "lookup table")?;
            Box::new(LookupOracle::load(p)?)
        }
        Some(s) if s.starts_with("service:") => {
            Box::new(RemoteMaskedOracle::new(Arc::new(client(&cfg, &s["service:".len()..]))))
        }
        Some("service") | None => Box::new(RemoteMaskedOracle::new(Arc::new(client(&cfg, &service_url(&cfg)?)))),
        Some(other) => bail!("unknown oracle {other:?}; expected lookup:PATH or service:URL"),
    };
    let report = run_pmi(&items, oracle.as_ref())?;
    write_csv(&out.join("pmi_scores.csv"), &report.scores)?;
    write_csv(&out.join("pmi_items.csv"), &report.aggregates)?;
    write_json(&out.join("pmi_summary.json"), &serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "items_scored": report.aggregates.len(),
        "excluded": report.excluded,
        "plausible_above_gp": report.aggregates.iter().filter(|a| a.delta > 0.0).count(),
        "test": report.test,
    }))?;
    match &report.test {
        Some(t) => println!(
            "{} items, {} excluded: W+ = {}, two-sided p = {:.3e} ({:?})",
            report.aggregates.len(),
            report.excluded.len(),
            t.statistic,
            t.p_two_sided,
            t.method
        ),
        None => println!("{} items, all differences zero", report.aggregates.len()),
    }
    Ok(())
}

pub fn lists(items_path: &Path, cfg: RunConfig, seed: Option<u64>, expected: Option<usize>, out: &Path) -> Result<()> {
    require_file(items_path, "items file")?;
    let seed = cfg.require_seed(seed)?;
    let items = load_items(items_path)?;
    let lists = generate_lists(&items, seed, expected)?;
    write_csv(&out.join("lists.csv"), &list_rows(&lists))?;
    let variants: Vec<VariantRow> = expand_all(&items)?.iter().map(VariantRow::from).collect();
    write_csv(&out.join("variants.csv"), &variants)?;
    println!("{} lists over {} items, {} variants", lists.len(), items.len(), variants.len());
    Ok(())
}

/// Returns the number of violations found.
pub fn validate(items_path: &Path, vocab: Option<&Path>, out: Option<&Path>) -> Result<usize> {
    require_file(items_path, "items file")?;
    let items = load_items(items_path)?;
    let v = match vocab {
        Some(p) => {
            require_file(p, "frequency list")?;
            build_vocabulary(p, &material_words(&items), FreqLoadOptions::default())?
        }
        None => Vocabulary::from_counts(material_words(&items).into_iter().map(|w| (w, 1)), "materials")?,
    };
    let violations: Vec<_> = items.iter().flat_map(|it| validate_item(it, &v)).collect();
    for x in &violations {
        println!("{}: {}: {}", x.item, x.field, x.message);
    }
    if let Some(o) = out {
        write_json(&o.join("violations.json"), &violations)?;
    }
    println!("{} items, {} violations", items.len(), violations.len());
    Ok(violations.len())
}

pub struct TrainArgs {
    pub corpus: PathBuf,
    pub vocab: Option<PathBuf>,
    pub items: Option<PathBuf>,
    pub order: usize,
    pub delta: f64,
}

pub fn train_lm(a: &TrainArgs, out: &Path) -> Result<()> {
    require_file(&a.corpus, "corpus")?;
    let corpus: Vec<Vec<String>> = std::fs::read_to_string(&a.corpus)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(words_of)
        .collect();
    let mut extra: Vec<String> = corpus.iter().flatten().cloned().collect();
    if let Some(p) = &a.items {
        require_file(p, "items file")?;
        extra.extend(material_words(&load_items(p)?));
    }
    let vocab = match &a.vocab {
        Some(p) => {
            require_file(p, "frequency list")?;
            build_vocabulary(p, &extra, FreqLoadOptions::default())?
        }
        None => {
            let mut counts: BTreeMap<String, u64> = BTreeMap::new();
            for w in corpus.iter().flatten() {
                *counts.entry(w.clone()).or_default() += 1;
            }
            for w in extra {
                counts.entry(w).or_insert(1);
            }
            Vocabulary::from_counts(counts, a.corpus.display().to_string())?
        }
    };
    let smoothing = SmoothingConfig {
        delta: a.delta,
        weights: None,
    };
    let model = NGramModel::train(&corpus, Arc::new(vocab), a.order, &smoothing)?;
    let path = out.join("model.json");
    crate::output::write_atomic(&path, model.to_json().as_bytes())?;
    println!(
        "trained order-{} model over {} words on {} sentences: {}",
        a.order,
        model.vocabulary().len(),
        corpus.len(),
        path.display()
    );
    Ok(())
}
