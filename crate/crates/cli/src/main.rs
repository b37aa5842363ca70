//! `medreply` command-line tool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const ARTIFACT_DIR_ENV: &str = medreply_service::ARTIFACT_DIR_ENV;

#[derive(Debug, Parser)]
#[command(name = "medreply", version, about = "Smart replies for patient messages")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Pipeline config (TOML, or JSON by extension); for `serve`, a service config.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Trigger probability threshold.
    #[arg(long, global = true, value_name = "P")]
    pub threshold: Option<f64>,
    /// Number of suggestions.
    #[arg(long, global = true, value_name = "K")]
    pub k: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pair chat messages and clean them: chats JSONL to pairs JSONL.
    Clean {
        #[arg(long, value_name = "PATH")]
        chats: PathBuf,
        /// Messages a doctor reply may look back for its patient block.
        #[arg(long, default_value_t = medreply_core::corpus::DEFAULT_MAX_LOOKBACK)]
        max_lookback: usize,
    },
    /// Cluster doctor replies into a canned-response set and label the pairs.
    BuildCanned {
        #[arg(long, value_name = "PATH")]
        pairs: PathBuf,
        #[arg(long, value_name = "PATH")]
        embeddings: Option<PathBuf>,
        /// Largest cluster count tried by the silhouette search.
        #[arg(long)]
        k_max: Option<usize>,
        /// Clusters smaller than this are dropped.
        #[arg(long, default_value_t = 2)]
        min_cluster_size: usize,
    },
    /// Train serving artifacts on labeled pairs.
    Train {
        #[arg(long, value_name = "PATH")]
        pairs: PathBuf,
        #[arg(long, value_name = "PATH")]
        embeddings: Option<PathBuf>,
    },
    /// Cross-validate the model grid, or score trained artifacts with --artifacts.
    Evaluate(EvalArgs),
    /// Threshold sweep of the configured pipeline (sweep.csv).
    Sweep(EvalArgs),
    /// Trigger x responder precision@3 grid (matrix.csv).
    Matrix {
        #[arg(long, value_name = "PATH")]
        pairs: PathBuf,
        #[arg(long, value_name = "PATH")]
        embeddings: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with ground truth.
    Synth {
        #[arg(long, default_value_t = 20)]
        intents: usize,
        /// Total pairs, infeasible included; a multiple of --intents.
        #[arg(long, default_value_t = 5000)]
        pairs: usize,
        #[arg(long, default_value_t = 0.231)]
        infeasible_fraction: f64,
        #[arg(long, default_value_t = 0.03)]
        typo_rate: f64,
        #[arg(long, default_value_t = 50)]
        dim: usize,
    },
    /// Serve suggestions over HTTP.
    Serve {
        #[arg(long, value_name = "DIR")]
        artifacts: Option<PathBuf>,
        #[arg(long, value_name = "ADDR")]
        bind: Option<String>,
        #[arg(long, value_name = "PATH")]
        request_log: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        selection_log: Option<PathBuf>,
        #[arg(long, value_name = "BYTES")]
        max_body_bytes: Option<usize>,
    },
    /// Suggest replies for one message.
    Suggest {
        text: String,
        #[arg(long, value_name = "DIR")]
        artifacts: Option<PathBuf>,
        /// Print the full suggestion as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub pairs: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    /// Score these trained artifacts on the pairs instead of cross-validating.
    #[arg(long, value_name = "DIR")]
    pub artifacts: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
