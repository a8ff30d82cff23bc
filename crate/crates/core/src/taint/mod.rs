//! Taint sources, propagation policy, sink checks and vulnerability reports.

mod report;
mod sinks;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decoder::Opcode;
use crate::engine::{Producer, Value};
use crate::stormodel::flatten_key;
use crate::word::U256;

pub use report::{
    assemble_report, taint_chain, ChainStep, Finding, Pattern, PatternMode, SourceRef, TaintTrace,
    VulnerabilityReport,
};
pub use sinks::{check_selfdestruct_sink, check_sinks_at_call, SinkKind, SinkRecord};

/// Instructions whose results an adversary can predict or influence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaintKind {
    Blockhash,
    Coinbase,
    Difficulty,
    Gaslimit,
    ModTime,
    Number,
    Timestamp,
}

impl TaintKind {
    pub const ALL: [TaintKind; 7] = [
        TaintKind::Blockhash,
        TaintKind::Coinbase,
        TaintKind::Difficulty,
        TaintKind::Gaslimit,
        TaintKind::ModTime,
        TaintKind::Number,
        TaintKind::Timestamp,
    ];

    /// Kind for opcodes that are sources by themselves. `MOD_TIME` is
    /// synthesized from `MOD`/`SMOD` and has no opcode of its own.
    pub fn of_opcode(op: Opcode) -> Option<TaintKind> {
        Some(match op {
            Opcode::Blockhash => TaintKind::Blockhash,
            Opcode::Coinbase => TaintKind::Coinbase,
            Opcode::Difficulty => TaintKind::Difficulty,
            Opcode::Gaslimit => TaintKind::Gaslimit,
            Opcode::Number => TaintKind::Number,
            Opcode::Timestamp => TaintKind::Timestamp,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            TaintKind::Blockhash => "BLOCKHASH",
            TaintKind::Coinbase => "COINBASE",
            TaintKind::Difficulty => "DIFFICULTY",
            TaintKind::Gaslimit => "GASLIMIT",
            TaintKind::ModTime => "MOD_TIME",
            TaintKind::Number => "NUMBER",
            TaintKind::Timestamp => "TIMESTAMP",
        }
    }
}

impl fmt::Display for TaintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaintKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.to_ascii_uppercase();
        TaintKind::ALL
            .into_iter()
            .find(|k| k.name() == upper)
            .ok_or_else(|| format!("unknown vulnerable instruction {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaintSource {
    pub kind: TaintKind,
    pub origin_pc: usize,
    pub run_index: u32,
}

impl fmt::Display for TaintSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{:#x}", self.kind, self.origin_pc)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaintSet(BTreeSet<TaintSource>);

impl TaintSet {
    pub fn new() -> Self {
        TaintSet(BTreeSet::new())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn insert(&mut self, source: TaintSource) {
        self.0.insert(source);
    }

    pub fn extend_from(&mut self, other: &TaintSet) {
        if other.0.is_empty() {
            return;
        }
        self.0.extend(other.0.iter().copied());
    }

    pub fn iter(&self) -> impl Iterator<Item = &TaintSource> {
        self.0.iter()
    }

    pub fn contains_kind(&self, kind: TaintKind) -> bool {
        self.0.iter().any(|s| s.kind == kind)
    }

    pub fn is_superset(&self, other: &TaintSet) -> bool {
        self.0.is_superset(&other.0)
    }

    /// Sources with the run index dropped, for comparing across reruns.
    pub fn sites(&self) -> BTreeSet<(TaintKind, usize)> {
        self.0.iter().map(|s| (s.kind, s.origin_pc)).collect()
    }
}

impl FromIterator<TaintSource> for TaintSet {
    fn from_iter<I: IntoIterator<Item = TaintSource>>(iter: I) -> Self {
        TaintSet(iter.into_iter().collect())
    }
}

/// Which instructions are sources, and how `BLOCKHASH` is treated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourcePolicy {
    pub vulnerable: BTreeSet<TaintKind>,
    /// Treat `BLOCKHASH(NUMBER + k)`, `k >= 1`, as an untainted value.
    pub suppress_future_blockhash: bool,
}

impl Default for SourcePolicy {
    fn default() -> Self {
        SourcePolicy {
            vulnerable: TaintKind::ALL.into_iter().collect(),
            suppress_future_blockhash: false,
        }
    }
}

/// Outcome of source marking for one produced instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceMark {
    None,
    Source(TaintSource),
    /// Value is known to be unpredictable; inherited taint is dropped.
    Cleansed,
}

impl SourcePolicy {
    pub fn is_vulnerable(&self, kind: TaintKind) -> bool {
        self.vulnerable.contains(&kind)
    }
}

/// Decides whether an instance produced by `op` at `pc` is a taint source.
///
/// `MOD`/`SMOD` results become `MOD_TIME` sources when an operand is
/// tainted by, or structurally derived from, `TIMESTAMP`.
pub fn mark_source(
    policy: &SourcePolicy,
    op: Opcode,
    operands: &[Value],
    pc: usize,
    run_index: u32,
) -> SourceMark {
    let source = |kind| {
        if policy.is_vulnerable(kind) {
            SourceMark::Source(TaintSource {
                kind,
                origin_pc: pc,
                run_index,
            })
        } else {
            SourceMark::None
        }
    };
    match op {
        Opcode::Mod | Opcode::Smod => {
            let timed = operands.iter().any(|v| {
                v.taints.contains_kind(TaintKind::Timestamp) || v.derives_from_timestamp()
            });
            if timed {
                source(TaintKind::ModTime)
            } else {
                SourceMark::None
            }
        }
        Opcode::Blockhash => {
            if policy.suppress_future_blockhash
                && operands.first().is_some_and(is_future_block_number)
            {
                SourceMark::Cleansed
            } else {
                source(TaintKind::Blockhash)
            }
        }
        other => match TaintKind::of_opcode(other) {
            Some(kind) => source(kind),
            None => SourceMark::None,
        },
    }
}

/// True when `arg` is structurally `NUMBER + k` with `1 <= k < 2^255`.
pub fn is_future_block_number(arg: &Value) -> bool {
    let poly = flatten_key(arg);
    let half = U256::from(1) << 255;
    poly.opaque_terms().len() == 1
        && poly.opaque_terms()[0].producer == Producer::Op(Opcode::Number)
        && !poly.constant().is_zero()
        && poly.constant() < half
}
