//! `asm`: command-line harness for the Audio Spectrogram Mixer.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod convert_cmd;
mod eval_cmd;
mod features_cmd;
mod params_cmd;
mod synth;
mod train_cmd;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or config; nothing was run. Exit code 2.
    Usage(String),
    /// The run itself failed. Exit code 1.
    Runtime(anyhow::Error),
}

#[derive(Parser)]
#[command(name = "asm", version, about = "Audio Spectrogram Mixer: train and evaluate an all-MLP audio classifier")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic sine-tone dataset with train/val/test manifests.
    Synth {
        /// Output directory for clips and manifests.
        #[arg(long)]
        out: PathBuf,
        /// Number of classes (distinct tone frequencies).
        #[arg(long, default_value_t = 3)]
        classes: usize,
        /// Clips per class, split 60/20/20.
        #[arg(long = "per-class", default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train a model from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override train.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated seed list; runs once per seed and summarizes.
        #[arg(long)]
        seeds: Option<String>,
        /// Override out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Parallel feature-extraction workers.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Read/write the sibling .asmf feature cache.
        #[arg(long)]
        cache: bool,
    },
    /// Evaluate a checkpoint on a manifest; prints `acc=<v> auc=<v>`.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Write per-clip logits as CSV.
        #[arg(long = "dump-logits")]
        dump_logits: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        cache: bool,
    },
    /// Convert a 3-channel projection checkpoint to single-channel.
    Convert {
        /// Source checkpoint holding the 3-channel projection.
        #[arg(long)]
        source: PathBuf,
        /// Channel combination: luma (0.299/0.587/0.114) or sum.
        #[arg(long)]
        mode: String,
        /// Destination checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Seed for the freshly initialized non-projection parameters.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the exact parameter count and per-component breakdown.
    Params {
        #[arg(long)]
        config: PathBuf,
    },
    /// Materialize the .asmf feature cache for every manifest in a config.
    Features {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    s.split(',')
        .map(|part| {
            part.trim()
                .parse::<u64>()
                .map_err(|_| CliError::Usage(format!("--seeds: '{part}' is not an integer")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Synth { out, classes, per_class, seed } => synth::run(&out, classes, per_class, seed),
        Cmd::Train { config, seed, seeds, out, jobs, cache } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            if let Some(seeds) = seeds {
                cfg.seeds = Some(parse_seeds(&seeds)?);
            }
            if let Some(out) = out {
                cfg.out_dir = Some(out);
            }
            if cache {
                cfg.data.cache = true;
            }
            train_cmd::run(cfg, jobs.max(1))
        }
        Cmd::Eval { checkpoint, manifest, dump_logits, jobs, cache } => {
            eval_cmd::run(&checkpoint, &manifest, dump_logits.as_deref(), cache, jobs.max(1))
        }
        Cmd::Convert { source, mode, out, seed } => convert_cmd::run(&source, &mode, &out, seed),
        Cmd::Params { config } => params_cmd::run(RunConfig::load(&config)?),
        Cmd::Features { config, jobs } => features_cmd::run(RunConfig::load(&config)?, jobs.max(1)),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
