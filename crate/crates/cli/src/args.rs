use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rngscan_core::taint::TaintKind;
use rngscan_core::word::Address;
use rngscan_core::PatternMode;

#[derive(Debug, Parser)]
#[command(
    name = "rngscan",
    version,
    about = "Find bad-randomness bugs and attacks in EVM contracts"
)]
pub struct Cli {
    /// TOML configuration file; command-line flags take precedence.
    #[arg(long, global = true, env = "RNGSCAN_CONFIG")]
    pub config: Option<PathBuf>,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "RNGSCAN_JOBS")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Statically scan runtime bytecode files or directories of them.
    Scan(ScanArgs),
    /// Replay fixture transactions and report attacks.
    Replay(ReplayArgs),
    /// Print the taint trace of one finding from a scan report.
    Explain(ExplainArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Summary,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Write the report here instead of stdout.
    #[arg(long, env = "RNGSCAN_OUT")]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum, env = "RNGSCAN_FORMAT")]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// `.hex` (hex text) or `.bin` (raw) files, or directories of them.
    #[arg(env = "RNGSCAN_INPUTS", value_delimiter = ',')]
    pub inputs: Vec<PathBuf>,

    #[arg(long, env = "RNGSCAN_MODE")]
    pub mode: Option<PatternMode>,

    #[arg(long, env = "RNGSCAN_MAX_PATHS")]
    pub max_paths: Option<usize>,

    #[arg(long, env = "RNGSCAN_MAX_BLOCKS_PER_PATH")]
    pub max_blocks_per_path: Option<usize>,

    #[arg(long, env = "RNGSCAN_MAX_RUNS")]
    pub max_runs: Option<u32>,

    #[arg(long, env = "RNGSCAN_TIMEOUT_SECS")]
    pub timeout_secs: Option<u64>,

    /// Vulnerable instructions to treat as sources (default: all seven).
    #[arg(long, value_delimiter = ',', env = "RNGSCAN_SOURCES")]
    pub sources: Option<Vec<TaintKind>>,

    /// Treat BLOCKHASH of a future block as unpredictable.
    #[arg(long, env = "RNGSCAN_SUPPRESS_FUTURE_BLOCKHASH", num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub suppress_future_blockhash: Option<bool>,

    /// Explore every path without snapshot pruning.
    #[arg(long, env = "RNGSCAN_NO_PRUNING", num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub no_pruning: Option<bool>,

    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Fixture `.json` files or directories of them.
    #[arg(env = "RNGSCAN_INPUTS", value_delimiter = ',')]
    pub inputs: Vec<PathBuf>,

    /// Largest block gap between a rollback and its profit transaction.
    #[arg(long, env = "RNGSCAN_WINDOW_BLOCKS")]
    pub window_blocks: Option<u64>,

    /// Only replay transactions whose target is listed.
    #[arg(long, value_delimiter = ',', env = "RNGSCAN_ALLOW")]
    pub allow: Option<Vec<Address>>,

    /// Skip transactions whose caller or target is listed.
    #[arg(long, value_delimiter = ',', env = "RNGSCAN_DENY")]
    pub deny: Option<Vec<Address>>,

    #[arg(long, value_delimiter = ',', env = "RNGSCAN_SOURCES")]
    pub sources: Option<Vec<TaintKind>>,

    /// Instruction budget per transaction.
    #[arg(long, env = "RNGSCAN_MAX_STEPS")]
    pub max_steps: Option<u64>,

    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// A JSON document written by `rngscan scan`.
    pub report: PathBuf,
    /// Finding id, e.g. `lottery/call@0x3e`.
    pub finding: String,
}
