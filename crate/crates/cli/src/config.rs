//! Configuration file and the settings merged from it and the command line.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use rngscan_core::replay::{ReplayConfig, SuspectFilter, DEFAULT_WINDOW};
use rngscan_core::taint::{SourcePolicy, TaintKind};
use rngscan_core::word::Address;
use rngscan_core::{EngineConfig, PatternMode};
use serde::Deserialize;

use crate::args::{Format, ReplayArgs, ScanArgs};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub jobs: Option<usize>,
    #[serde(default)]
    pub scan: ScanFile,
    #[serde(default)]
    pub replay: ReplayFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanFile {
    pub inputs: Option<Vec<PathBuf>>,
    pub mode: Option<PatternMode>,
    pub max_paths: Option<usize>,
    pub max_blocks_per_path: Option<usize>,
    pub max_runs: Option<u32>,
    pub timeout_secs: Option<u64>,
    pub sources: Option<Vec<TaintKind>>,
    pub suppress_future_blockhash: Option<bool>,
    pub pruning: Option<bool>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayFile {
    pub inputs: Option<Vec<PathBuf>>,
    pub window_blocks: Option<u64>,
    pub allow: Option<Vec<Address>>,
    pub deny: Option<Vec<Address>>,
    pub sources: Option<Vec<TaintKind>>,
    pub max_steps: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone)]
pub struct ScanSettings {
    pub inputs: Vec<PathBuf>,
    pub engine: EngineConfig,
    pub out: Option<PathBuf>,
    pub format: Format,
}

#[derive(Debug, Clone)]
pub struct ReplaySettings {
    pub inputs: Vec<PathBuf>,
    pub window: u64,
    pub filter: SuspectFilter,
    pub replay: ReplayConfig,
    pub out: Option<PathBuf>,
    pub format: Format,
}

fn source_set(kinds: Option<Vec<TaintKind>>) -> Result<BTreeSet<TaintKind>> {
    match kinds {
        None => Ok(TaintKind::ALL.into_iter().collect()),
        Some(k) if k.is_empty() => bail!("sources must name at least one vulnerable instruction"),
        Some(k) => Ok(k.into_iter().collect()),
    }
}

impl ScanSettings {
    pub fn merge(args: ScanArgs, file: ScanFile) -> Result<ScanSettings> {
        let defaults = EngineConfig::default();
        let inputs = if args.inputs.is_empty() {
            file.inputs.unwrap_or_default()
        } else {
            args.inputs
        };
        let pruning = match args.no_pruning {
            Some(off) => !off,
            None => file.pruning.unwrap_or(defaults.pruning),
        };
        let engine = EngineConfig {
            max_paths: args
                .max_paths
                .or(file.max_paths)
                .unwrap_or(defaults.max_paths),
            max_blocks_per_path: args
                .max_blocks_per_path
                .or(file.max_blocks_per_path)
                .unwrap_or(defaults.max_blocks_per_path),
            max_runs: args.max_runs.or(file.max_runs).unwrap_or(defaults.max_runs),
            timeout: args
                .timeout_secs
                .or(file.timeout_secs)
                .map(Duration::from_secs)
                .unwrap_or(defaults.timeout),
            pattern_mode: args.mode.or(file.mode).unwrap_or_default(),
            pruning,
            sources: SourcePolicy {
                vulnerable: source_set(args.sources.or(file.sources))?,
                suppress_future_blockhash: args
                    .suppress_future_blockhash
                    .or(file.suppress_future_blockhash)
                    .unwrap_or(false),
            },
            keep_trails: false,
        };
        engine.validate()?;
        Ok(ScanSettings {
            inputs,
            engine,
            out: args.output.out.or(file.out),
            format: args.output.format.or(file.format).unwrap_or(Format::Json),
        })
    }
}

impl ReplaySettings {
    pub fn merge(args: ReplayArgs, file: ReplayFile) -> Result<ReplaySettings> {
        let inputs = if args.inputs.is_empty() {
            file.inputs.unwrap_or_default()
        } else {
            args.inputs
        };
        let defaults = ReplayConfig::default();
        let max_steps = args
            .max_steps
            .or(file.max_steps)
            .unwrap_or(defaults.max_steps);
        if max_steps == 0 {
            bail!("max_steps must be at least 1");
        }
        Ok(ReplaySettings {
            inputs,
            window: args
                .window_blocks
                .or(file.window_blocks)
                .unwrap_or(DEFAULT_WINDOW),
            filter: SuspectFilter {
                allow: args.allow.or(file.allow).map(|a| a.into_iter().collect()),
                deny: args
                    .deny
                    .or(file.deny)
                    .unwrap_or_default()
                    .into_iter()
                    .collect(),
            },
            replay: ReplayConfig {
                vulnerable: source_set(args.sources.or(file.sources))?,
                max_steps,
            },
            out: args.output.out.or(file.out),
            format: args.output.format.or(file.format).unwrap_or(Format::Json),
        })
    }
}
