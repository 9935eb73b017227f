//! Command-line runner: dataset generation, training, evaluation, and
//! multi-seed comparison.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nmlgcl::error::CoreError;

#[derive(Parser)]
#[command(name = "nmlgcl", version, about = "Graph contrastive learning with a learnable negative metric")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-partition dataset with Gaussian features.
    GenSbm(GenSbmCli),
    /// Train the contrastive model (or the InfoNCE baseline).
    Train(TrainCli),
    /// Evaluate a checkpoint: linear probe, clustering, diagnostics.
    Eval(EvalCli),
    /// Train both methods over several seeds and aggregate the metrics.
    Compare(CompareCli),
}

#[derive(Args)]
struct GenSbmCli {
    /// Comma-separated block sizes, e.g. 150,150.
    #[arg(long)]
    blocks: String,
    #[arg(long)]
    p_in: f64,
    #[arg(long)]
    p_out: f64,
    #[arg(long, default_value_t = 32)]
    feature_dim: usize,
    /// Norm of each block's feature mean offset.
    #[arg(long, default_value_t = 1.0)]
    feature_shift: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for edges.txt, features, labels.txt, sbm.toml.
    #[arg(long)]
    out: PathBuf,
    /// Write features in the binary format instead of text.
    #[arg(long)]
    binary_features: bool,
}

#[derive(Args)]
struct TrainCli {
    /// Dataset directory (edges.txt, features.txt or features.bin,
    /// optional labels.txt).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint.ckpt, history.csv, manifest.toml.
    #[arg(long)]
    out: PathBuf,
    /// Flat key-value config file; a manifest.toml also works.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named hyperparameter profile (cora, citeseer, pubmed, photo,
    /// computers, wikics).
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train the plain InfoNCE baseline instead.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct EvalCli {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Random train:val:test ratio split, e.g. 1:1:8.
    #[arg(long, default_value = "1:1:8")]
    split_ratio: String,
    /// Fixed split file: one of train/val/test (or 0/1/2) per node line.
    #[arg(long)]
    split_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-2)]
    probe_lr: f64,
    #[arg(long, default_value_t = 300)]
    probe_epochs: usize,
    /// Number of clusters; defaults to the number of distinct labels.
    #[arg(long)]
    kmeans_k: Option<usize>,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Histogram bins over cosine similarity.
    #[arg(long, default_value_t = 40)]
    bins: usize,
}

#[derive(Args)]
struct CompareCli {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    profile: Option<String>,
    /// Seeds as a range `0..5` (half-open) or a list `0,1,2`.
    #[arg(long, default_value = "0..5")]
    seeds: String,
    #[arg(long, default_value_t = 1e-2)]
    probe_lr: f64,
    #[arg(long, default_value_t = 300)]
    probe_epochs: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

fn exit_code_for(err: &CoreError) -> u8 {
    match err {
        CoreError::Argument(_) | CoreError::Contract(_) => EXIT_CONFIG,
        CoreError::Parse { .. }
        | CoreError::Bounds { .. }
        | CoreError::Shape(_)
        | CoreError::Io { .. }
        | CoreError::Checkpoint(_)
        | CoreError::DegenerateSplit(_)
        | CoreError::MissingLabels(_) => EXIT_DATA,
        CoreError::Numeric(_)
        | CoreError::NonFiniteGradient { .. }
        | CoreError::NonFiniteLoss { .. }
        | CoreError::OracleFailure { .. } => EXIT_NUMERIC,
    }
}

fn parse_blocks(text: &str) -> Result<Vec<usize>, CoreError> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| CoreError::Argument(format!("bad block size `{t}`: {e}")))
        })
        .collect()
}

fn parse_ratio(text: &str) -> Result<(usize, usize, usize), CoreError> {
    let parts: Vec<usize> = text
        .split(':')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| CoreError::Argument(format!("bad split ratio `{text}`: {e}")))
        })
        .collect::<Result<_, _>>()?;
    if parts.len() != 3 {
        return Err(CoreError::Argument(format!(
            "split ratio must have three parts, got `{text}`"
        )));
    }
    Ok((parts[0], parts[1], parts[2]))
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, CoreError> {
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo
            .trim()
            .parse()
            .map_err(|e| CoreError::Argument(format!("bad seed range `{text}`: {e}")))?;
        let hi: u64 = hi
            .trim()
            .parse()
            .map_err(|e| CoreError::Argument(format!("bad seed range `{text}`: {e}")))?;
        if hi <= lo {
            return Err(CoreError::Argument(format!("empty seed range `{text}`")));
        }
        return Ok((lo..hi).collect());
    }
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|e| CoreError::Argument(format!("bad seed `{t}`: {e}")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), CoreError> {
    match cli.command {
        Command::GenSbm(a) => commands::cmd_gen_sbm(&commands::GenSbmArgs {
            blocks: parse_blocks(&a.blocks)?,
            p_in: a.p_in,
            p_out: a.p_out,
            feature_dim: a.feature_dim,
            feature_shift: a.feature_shift,
            seed: a.seed,
            out: a.out,
            binary_features: a.binary_features,
        }),
        Command::Train(a) => commands::cmd_train(&commands::TrainArgs {
            data: a.data,
            out: a.out,
            config: a.config,
            profile: a.profile,
            seed: a.seed,
            baseline: a.baseline,
        }),
        Command::Eval(a) => commands::cmd_eval(&commands::EvalArgs {
            checkpoint: a.checkpoint,
            data: a.data,
            out: a.out,
            split_ratio: parse_ratio(&a.split_ratio)?,
            split_file: a.split_file,
            seed: a.seed,
            probe_lr: a.probe_lr,
            probe_epochs: a.probe_epochs,
            kmeans_k: a.kmeans_k,
            restarts: a.restarts,
            bins: a.bins,
        }),
        Command::Compare(a) => commands::cmd_compare(&commands::CompareArgs {
            data: a.data,
            out: a.out,
            config: a.config,
            profile: a.profile,
            seeds: parse_seeds(&a.seeds)?,
            probe_lr: a.probe_lr,
            probe_epochs: a.probe_epochs,
            restarts: a.restarts,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
