//! `ncgp`: batch front end for noisy-channel inference, stimulus lists,
//! reading measures and PMI analysis.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "ncgp", version, about = "Noisy-channel garden-path toolkit")]
struct Cli {
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for stochastic commands; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone, Default)]
pub struct InputArgs {
    /// Item file; every item expands to its ten condition variants.
    #[arg(long, group = "input")]
    items: Option<PathBuf>,
    /// Toy world file (corpus, model settings and sentences).
    #[arg(long, group = "input")]
    toy: Option<PathBuf>,
    /// Plain sentences, one per line, optionally `id<TAB>sentence`.
    #[arg(long, group = "input")]
    sentences: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
pub struct ModelArgs {
    /// `ngram:PATH` or `service:URL` (bare `service` reads the URL from the
    /// config, then from NCGP_SERVICE_URL).
    #[arg(long)]
    prior: Option<String>,
    /// Frequency list for the vocabulary of a service prior.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Number of particles; overrides the config file.
    #[arg(long)]
    particles: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Particle-filter inference for every input sentence.
    Infer {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Exact posterior by enumeration (small instances only).
    Oracle {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Per-position action TV and surprisal differences between two runs.
    Compare {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
    },
    /// Word-level reading measures and exclusions from trajectory files.
    Measures {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        boxes: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        /// Trial metadata: trial, item, condition, variant, is_filler.
        #[arg(long)]
        meta: Option<PathBuf>,
        /// Item file used to label regions.
        #[arg(long)]
        items: Option<PathBuf>,
    },
    /// Condition by region means with bootstrap intervals.
    Aggregate {
        /// `dataset.json` written by `measures`.
        #[arg(long)]
        dataset: PathBuf,
        /// Measure name; repeat for several (default: all).
        #[arg(long = "measure")]
        measures: Vec<String>,
    },
    /// PMI between critical words and predicates, with the signed-rank test.
    Pmi {
        #[arg(long)]
        items: PathBuf,
        /// `lookup:PATH` or `service:URL`.
        #[arg(long)]
        oracle: Option<String>,
    },
    /// Latin-square presentation lists.
    Lists {
        #[arg(long)]
        items: PathBuf,
        /// Fail unless the file holds exactly this many items.
        #[arg(long)]
        expect_items: Option<usize>,
    },
    /// Check items against structural and vocabulary constraints.
    Validate {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Train an n-gram model and write `model.json`.
    TrainLm {
        #[arg(long)]
        corpus: PathBuf,
        /// Frequency list; corpus words are always added.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Item file whose words join the vocabulary.
        #[arg(long)]
        items: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = RunConfig::load_opt(cli.config.as_deref())?;
    let out = &cli.out;
    match cli.cmd {
        Command::Infer { input, model } => commands::infer(&input, &model, cfg, cli.seed, out, cli.jobs)?,
        Command::Oracle { input, model } => commands::oracle(&input, &model, cfg, out, cli.jobs)?,
        Command::Compare { reference, candidate } => commands::compare(&reference, &candidate, out)?,
        Command::Measures {
            samples,
            boxes,
            responses,
            meta,
            items,
        } => commands::measures(
            &commands::MeasureFiles {
                samples,
                boxes,
                responses,
                meta,
                items,
            },
            cfg,
            out,
        )?,
        Command::Aggregate { dataset, measures } => commands::aggregate_cmd(&dataset, &measures, cfg, cli.seed, out)?,
        Command::Pmi { items, oracle } => commands::pmi(&items, oracle.as_deref(), cfg, out)?,
        Command::Lists { items, expect_items } => commands::lists(&items, cfg, cli.seed, expect_items, out)?,
        Command::Validate { items, vocab } => {
            if commands::validate(&items, vocab.as_deref(), Some(out))? > 0 {
                return Ok(ExitCode::from(2));
            }
        }
        Command::TrainLm {
            corpus,
            vocab,
            items,
            order,
            delta,
        } => commands::train_lm(
            &commands::TrainArgs {
                corpus,
                vocab,
                items,
                order,
                delta,
            },
            out,
        )?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
