#![allow(dead_code)]

pub mod reference;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rngscan::args::Format;
use rngscan::config::{ReplaySettings, ScanSettings};
use rngscan_core::asm::{assemble, Assembled};
use rngscan_core::replay::{ReplayConfig, SuspectFilter, DEFAULT_WINDOW};
use rngscan_core::taint::{Pattern, SourcePolicy, TaintKind};
use rngscan_core::EngineConfig;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn scan_dir(kind: &str) -> PathBuf {
    fixtures().join("scan").join(kind)
}

pub fn replay_dir() -> PathBuf {
    fixtures().join("replay")
}

pub fn regen() -> bool {
    std::env::var("REGEN_FIXTURES").is_ok_and(|v| v == "1")
}

/// Engine settings the corpus is classified under.
pub fn corpus_engine() -> EngineConfig {
    EngineConfig {
        sources: SourcePolicy {
            suppress_future_blockhash: true,
            ..SourcePolicy::default()
        },
        ..EngineConfig::default()
    }
}

pub fn scan_settings(inputs: Vec<PathBuf>, engine: EngineConfig) -> ScanSettings {
    ScanSettings {
        inputs,
        engine,
        out: None,
        format: Format::Json,
    }
}

pub fn replay_settings(inputs: Vec<PathBuf>) -> ReplaySettings {
    ReplaySettings {
        inputs,
        window: DEFAULT_WINDOW,
        filter: SuspectFilter::default(),
        replay: ReplayConfig::default(),
        out: None,
        format: Format::Json,
    }
}

/// One `.easm` corpus source with the expectations in its header.
pub struct CorpusEntry {
    pub name: String,
    pub path: PathBuf,
    pub source: String,
    pub asm: Assembled,
    pub patterns: BTreeSet<Pattern>,
    pub sources: BTreeSet<TaintKind>,
    pub runs: Option<u32>,
    pub extended: bool,
    pub is_loop: bool,
}

fn header(source: &str, key: &str) -> Option<String> {
    source.lines().find_map(|l| {
        l.strip_prefix(';')
            .map(str::trim)
            .and_then(|l| l.strip_prefix(key))
            .and_then(|l| l.strip_prefix(':'))
            .map(|v| v.trim().to_string())
    })
}

fn parse_pattern(s: &str) -> Pattern {
    *Pattern::ALL
        .iter()
        .find(|p| p.name() == s)
        .unwrap_or_else(|| panic!("unknown pattern {s}"))
}

pub fn corpus(kind: &str) -> Vec<CorpusEntry> {
    let dir = scan_dir(kind);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "easm"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let source = std::fs::read_to_string(&path).unwrap();
            let asm = assemble(&source).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            let words = |k: &str| header(&source, k).unwrap_or_default();
            CorpusEntry {
                name: path.file_stem().unwrap().to_string_lossy().into_owned(),
                patterns: words("expect")
                    .split_whitespace()
                    .map(parse_pattern)
                    .collect(),
                sources: words("sources")
                    .split_whitespace()
                    .map(|s| s.parse().unwrap())
                    .collect(),
                runs: header(&source, "runs").map(|r| r.parse().unwrap()),
                extended: header(&source, "extended").is_some_and(|v| v == "true"),
                is_loop: header(&source, "loop").is_some_and(|v| v == "true"),
                path,
                source,
                asm,
            }
        })
        .collect()
}

impl CorpusEntry {
    pub fn hex_path(&self) -> PathBuf {
        self.path.with_extension("hex")
    }

    /// Pcs of the labels named `src_*`.
    pub fn source_pcs(&self) -> BTreeSet<usize> {
        self.asm
            .labels
            .iter()
            .filter(|(k, _)| k.starts_with("src_"))
            .map(|(_, v)| *v)
            .collect()
    }
}

/// Replay fixtures in file-name order.
pub fn replay_fixtures() -> Vec<(PathBuf, rngscan_core::replay::Fixture)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(replay_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let f = rngscan_core::replay::Fixture::load(&p).unwrap();
            (p, f)
        })
        .collect()
}
