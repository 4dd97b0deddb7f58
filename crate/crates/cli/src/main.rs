//! `persona-attr`: build datasets, train, decode, rerank, evaluate and
//! analyze from one config file.

mod commands;
mod config;
mod layout;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use persona_attr::synthetic::SyntheticConfig;
use persona_attr::{Split, Task};

use commands::{Ctx, EvaluateArgs};
use config::{parse_seed_list, ConfigError, PipelineConfig, Seeds};

#[derive(Parser, Debug)]
#[command(name = "persona-attr", version, about = "Persona attribute extraction and inference pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Pipeline config (TOML).
    #[arg(long, short, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides `paths.work_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    work_dir: Option<PathBuf>,
    /// Seed for every stochastic stage.
    #[arg(long, global = true, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Several seeds, e.g. `40-44` or `40,42`.
    #[arg(long, global = true, value_parser = parse_seed_list)]
    seeds: Option<Seeds>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Debug)]
struct TaskArg {
    /// `extraction` or `inference`; defaults to the config's task.
    #[arg(long)]
    task: Option<Task>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic raw corpus.
    Synth {
        /// Output directory; defaults to `<work_dir>/raw`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        corpus_seed: u64,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 300)]
        dev: usize,
        #[arg(long, default_value_t = 300)]
        test: usize,
    },
    /// Clean the raw corpus into extraction and inference sample files.
    BuildDataset {
        /// Directory holding the train, dev and test files.
        #[arg(long)]
        raw: Option<PathBuf>,
        /// Keep duplicate samples.
        #[arg(long)]
        keep_duplicates: bool,
    },
    /// Fine-tune the generator.
    TrainGenerator {
        #[command(flatten)]
        task: TaskArg,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Beam-search candidate triples.
    Decode {
        #[command(flatten)]
        task: TaskArg,
        #[arg(long, value_delimiter = ',', default_value = "train,dev,test")]
        split: Vec<Split>,
        /// Disable the grammar and task masks.
        #[arg(long)]
        free: bool,
        #[arg(long)]
        beam: Option<usize>,
        /// Candidates kept per sentence.
        #[arg(long)]
        candidates: Option<usize>,
    },
    /// Train the candidate reranker on decoded train and dev candidates.
    TrainReranker {
        #[command(flatten)]
        task: TaskArg,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Pick one triple per sentence.
    Predict {
        #[command(flatten)]
        task: TaskArg,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Take the generator's top candidate.
        #[arg(long)]
        no_reranker: bool,
    },
    /// Score a prediction file against gold samples.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Candidate file for recall@k.
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long, value_name = "K")]
        recall_at: Option<usize>,
        #[arg(long)]
        per_relation: bool,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full system against no-constraints and no-reranker variants.
    Ablate {
        #[command(flatten)]
        task: TaskArg,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Transformation coverage and tail dependency/POS distributions.
    Analyze {
        /// Lexical resource directory; overrides config and environment.
        #[arg(long)]
        resources: Option<PathBuf>,
        /// Dependency parses of extraction sentences.
        #[arg(long)]
        parses: Option<PathBuf>,
        /// Skip samples whose tail is not found in the parse.
        #[arg(long)]
        lenient: bool,
    },
}

fn load_config(g: &Global) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(w) = &g.work_dir {
        cfg.paths.work_dir = w.clone();
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    let mut cfg = load_config(&cli.global)?;
    let seeds = cli.global.seeds.clone().map_or_else(|| vec![cfg.seed], |s| s.0);
    let task_of = |t: &TaskArg, cfg: &PipelineConfig| t.task.unwrap_or(cfg.task);
    match cli.command {
        Command::Synth { out, corpus_seed, train, dev, test } => {
            let corpus = SyntheticConfig { seed: corpus_seed, train, dev, test, ..SyntheticConfig::default() };
            commands::synth(&Ctx::new(cfg, seeds, args)?, out, corpus)
        }
        Command::BuildDataset { raw, keep_duplicates } => {
            cfg.dataset.dedup &= !keep_duplicates;
            commands::build_dataset(&Ctx::new(cfg, seeds, args)?, raw)
        }
        Command::TrainGenerator { task, lr, epochs, max_steps } => {
            let task = task_of(&task, &cfg);
            cfg.task = task;
            if let Some(lr) = lr {
                match task {
                    Task::Extraction => cfg.generator.lr_extraction = lr,
                    Task::Inference => cfg.generator.lr_inference = lr,
                }
            }
            cfg.generator.max_epochs = epochs.unwrap_or(cfg.generator.max_epochs);
            cfg.generator.max_steps = max_steps.or(cfg.generator.max_steps);
            commands::train_generator_cmd(&Ctx::new(cfg, seeds, args)?, task)
        }
        Command::Decode { task, split, free, beam, candidates } => {
            let task = task_of(&task, &cfg);
            cfg.task = task;
            cfg.decode.beam = beam.unwrap_or(cfg.decode.beam);
            cfg.decode.candidates = candidates.unwrap_or(cfg.decode.candidates);
            commands::decode_cmd(&Ctx::new(cfg, seeds, args)?, task, &split, free)
        }
        Command::TrainReranker { task, lr, epochs } => {
            let task = task_of(&task, &cfg);
            cfg.task = task;
            cfg.reranker.lr = lr.unwrap_or(cfg.reranker.lr);
            cfg.reranker.max_epochs = epochs.unwrap_or(cfg.reranker.max_epochs);
            commands::train_reranker_cmd(&Ctx::new(cfg, seeds, args)?, task)
        }
        Command::Predict { task, split, no_reranker } => {
            let task = task_of(&task, &cfg);
            cfg.task = task;
            commands::predict_cmd(&Ctx::new(cfg, seeds, args)?, task, split, no_reranker)
        }
        Command::Evaluate { pred, gold, candidates, recall_at, per_relation, out } => commands::evaluate_cmd(
            &Ctx::new(cfg, seeds, args)?,
            EvaluateArgs { pred, gold, candidates, recall_at, per_relation, out },
        ),
        Command::Ablate { task, split } => {
            let task = task_of(&task, &cfg);
            cfg.task = task;
            commands::ablate_cmd(&Ctx::new(cfg, seeds, args)?, task, split)
        }
        Command::Analyze { resources, parses, lenient } => {
            commands::analyze_cmd(&Ctx::new(cfg, seeds, args)?, resources, parses, lenient)
        }
    }
}

/// 2 for configuration problems, 1 for anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err.chain().any(|e| {
        e.is::<ConfigError>() || matches!(e.downcast_ref::<persona_attr::Error>(), Some(persona_attr::Error::Config(_)))
    });
    if config {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli, args.into_iter().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
