//! `phmm`: command-line driver for the parsimonious HMM toolkit.
//!
//! Every subcommand reads a `key=value` config file (optional), applies
//! `--set key=value` overrides on top, and works inside the configured
//! work directory. Worker threads come from `PHMM_THREADS` when set.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phmm_core::pipeline::{self, PipelineConfig};
use phmm_core::{Error, Result};

const THREADS_VAR: &str = "PHMM_THREADS";

#[derive(Parser)]
#[command(name = "phmm", version, about = "Tied-state HMM construction, training and decoding")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key=value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Work directory; overrides the config file.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/eval corpus and ground truth.
    Synth,
    /// Flat-start and train the untied model.
    TrainUntied,
    /// Align the training set with the untied model and dump state statistics.
    CollectStats,
    /// Build the per-position question sets.
    BuildQuestions,
    /// Tie states down to the configured budget.
    Tie,
    /// Train the tied model.
    TrainTied,
    /// Train the character language model.
    TrainLm,
    /// Decode the evaluation set.
    Decode,
    /// Character error rate of a hypothesis file against references.
    Eval {
        /// Reference transcripts; defaults to the eval transcripts.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Hypotheses; defaults to the decoder output.
        #[arg(long)]
        hypotheses: Option<PathBuf>,
    },
    /// Run every stage after synthesis.
    Pipeline {
        /// Generate the corpus first.
        #[arg(long)]
        synth: bool,
    },
    /// Write the report from existing artifacts.
    Report,
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::read(path)?,
        None => PipelineConfig::default(),
    };
    let mut pairs = Vec::with_capacity(common.set.len());
    for item in &common.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got {item:?}")))?;
        pairs.push((k.trim(), v.trim()));
    }
    cfg.apply(pairs)?;
    if let Some(dir) = &common.workdir {
        cfg.workdir = dir.clone();
    }
    Ok(cfg)
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_VAR} must be a positive integer, got {raw:?}")))?;
    if threads == 0 {
        return Err(Error::Config(format!("{THREADS_VAR} must be positive")));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Synth => pipeline::cmd_synth(&cfg)?,
        Command::TrainUntied => {
            let model = pipeline::cmd_train_untied(&cfg)?;
            println!(
                "untied model: {} states, {} parameters",
                model.n_tied(),
                model.parameter_count()
            );
        }
        Command::CollectStats => {
            pipeline::cmd_collect_stats(&cfg)?;
        }
        Command::BuildQuestions => {
            let questions = pipeline::cmd_build_questions(&cfg)?;
            println!("{} questions", questions.len());
        }
        Command::Tie => {
            let tying = pipeline::cmd_tie(&cfg)?;
            println!("{} tied states", tying.n_total());
        }
        Command::TrainTied => {
            let model = pipeline::cmd_train_tied(&cfg)?;
            println!(
                "tied model: {} states, {} parameters",
                model.n_tied(),
                model.parameter_count()
            );
        }
        Command::TrainLm => {
            pipeline::cmd_train_lm(&cfg)?;
        }
        Command::Decode => {
            let seconds = pipeline::cmd_decode(&cfg)?;
            println!("decode_seconds {seconds}");
        }
        Command::Eval { reference, hypotheses } => {
            let paths = cfg.paths();
            let reference = reference.unwrap_or(paths.eval_transcripts);
            let hypotheses = hypotheses.unwrap_or(paths.hypotheses);
            let counts = pipeline::cmd_eval(&reference, &hypotheses, &cfg.exclude)?;
            println!("cer {}", counts.rate());
            println!("substitutions {}", counts.substitutions);
            println!("insertions {}", counts.insertions);
            println!("deletions {}", counts.deletions);
            println!("reference_chars {}", counts.ref_len);
        }
        Command::Pipeline { synth } => {
            if synth {
                pipeline::cmd_synth(&cfg).map_err(|e| e.in_stage("synth"))?;
            }
            let outcome = pipeline::cmd_pipeline(&cfg)?;
            print!("{}", outcome.report.to_text());
            println!("decode_seconds {}", outcome.decode_seconds);
        }
        Command::Report => print!("{}", pipeline::cmd_report(&cfg)?.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
