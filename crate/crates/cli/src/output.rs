//! Output documents and their renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use rngscan_core::engine::{Counters, Diagnostic};
use rngscan_core::replay::{AttackKind, AttackReport, TxStatus};
use rngscan_core::word::{Address, HexWord};
use rngscan_core::{PatternMode, VulnerabilityReport};
use serde::Serialize;

use crate::args::Format;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct InputError {
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tx: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractResult {
    pub contract: String,
    pub path: String,
    pub report: VulnerabilityReport,
    /// A global bound stopped exploration; findings may be missing.
    pub incomplete: bool,
    pub runs: usize,
    pub fixpoint: bool,
    pub counters: Counters,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanDocument {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub mode: PatternMode,
    pub contracts: Vec<ContractResult>,
    pub errors: Vec<InputError>,
    /// Wall-clock seconds per contract. Not covered by determinism.
    pub timing: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TxResult {
    pub tx: String,
    pub fixture: String,
    pub caller: Address,
    pub target: Address,
    pub status: TxStatus,
    /// Replay hit an unsupported instruction or precompile.
    pub partial: bool,
    pub frames: usize,
    pub events: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VictimLoss {
    pub target: Address,
    pub loss: HexWord,
    pub attacks: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplayDocument {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub window_blocks: u64,
    pub transactions: Vec<TxResult>,
    pub reports: Vec<AttackReport>,
    pub victims: Vec<VictimLoss>,
    pub errors: Vec<InputError>,
    /// Wall-clock seconds per transaction. Not covered by determinism.
    pub timing: BTreeMap<String, f64>,
}

pub trait Document: Serialize {
    fn clear_timing(&mut self);
    fn summary(&self) -> String;

    fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("documents serialize");
        s.push('\n');
        s
    }

    /// JSON with the timing map emptied.
    fn stable_json(&self) -> String
    where
        Self: Clone,
    {
        let mut copy = self.clone();
        copy.clear_timing();
        copy.to_json()
    }
}

impl Document for ScanDocument {
    fn clear_timing(&mut self) {
        self.timing.clear();
    }

    fn summary(&self) -> String {
        let mut s = String::new();
        let flagged = self
            .contracts
            .iter()
            .filter(|c| !c.report.findings.is_empty())
            .count();
        let _ = writeln!(
            s,
            "scanned {} contracts (mode {}): {} vulnerable, {} errors",
            self.contracts.len(),
            self.mode,
            flagged,
            self.errors.len()
        );
        for c in &self.contracts {
            let note = if c.incomplete { " (incomplete)" } else { "" };
            let _ = writeln!(
                s,
                "{}: {} findings{note}",
                c.contract,
                c.report.findings.len()
            );
            for f in &c.report.findings {
                let patterns: Vec<&str> = f.patterns.iter().map(|p| p.name()).collect();
                let sources: Vec<String> = f
                    .sources
                    .iter()
                    .map(|src| format!("{}@{:#x}", src.kind, src.pc))
                    .collect();
                let _ = writeln!(
                    s,
                    "  {}  {}  sources {}",
                    f.id,
                    patterns.join(","),
                    sources.join(",")
                );
            }
        }
        for e in &self.errors {
            let _ = writeln!(s, "error: {}: {}", e.path, e.message);
        }
        s
    }
}

impl Document for ReplayDocument {
    fn clear_timing(&mut self) {
        self.timing.clear();
    }

    fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "replayed {} transactions: {} attack reports, {} errors",
            self.transactions.len(),
            self.reports.len(),
            self.errors.len()
        );
        for r in &self.reports {
            let kind = match r.kind {
                AttackKind::ManipulationOrPrediction => "manipulation/prediction",
                AttackKind::Rollback => "rollback",
            };
            let _ = writeln!(
                s,
                "{kind}: {} -> {} txs {} loss {}",
                r.caller,
                r.target,
                r.transactions.join(","),
                r.loss
            );
        }
        for v in &self.victims {
            let _ = writeln!(
                s,
                "victim {}: loss {} over {} attacks",
                v.target, v.loss, v.attacks
            );
        }
        for e in &self.errors {
            let tx =
                e.tx.as_deref()
                    .map(|t| format!(" tx {t}"))
                    .unwrap_or_default();
            let _ = writeln!(s, "error: {}{tx}: {}", e.path, e.message);
        }
        s
    }
}

pub fn emit(doc: &impl Document, format: Format, out: Option<&Path>) -> Result<()> {
    let text = match format {
        Format::Json => doc.to_json(),
        Format::Summary => doc.summary(),
    };
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}
