use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{InstanceId, Value};
use crate::taint::{SinkKind, SinkRecord, TaintKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pattern {
    #[serde(rename = "CALLJUMPI")]
    CallJumpI,
    #[serde(rename = "CALLToAddress")]
    CallToAddress,
    #[serde(rename = "CALLValue")]
    CallValue,
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [
        Pattern::CallJumpI,
        Pattern::CallToAddress,
        Pattern::CallValue,
    ];

    pub fn of_sink(kind: SinkKind) -> Pattern {
        match kind {
            SinkKind::GuardJumpI => Pattern::CallJumpI,
            SinkKind::CallToAddress => Pattern::CallToAddress,
            SinkKind::CallValue => Pattern::CallValue,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pattern::CallJumpI => "CALLJUMPI",
            Pattern::CallToAddress => "CALLToAddress",
            Pattern::CallValue => "CALLValue",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How matched patterns combine into a finding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternMode {
    /// At least one pattern.
    #[default]
    Any,
    /// All three patterns at the same transfer.
    All,
}

impl PatternMode {
    pub fn accepts(self, matched: &BTreeSet<Pattern>) -> bool {
        match self {
            PatternMode::Any => !matched.is_empty(),
            PatternMode::All => Pattern::ALL.iter().all(|p| matched.contains(p)),
        }
    }
}

impl fmt::Display for PatternMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatternMode::Any => "any",
            PatternMode::All => "all",
        })
    }
}

impl FromStr for PatternMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "any" => Ok(PatternMode::Any),
            "all" => Ok(PatternMode::All),
            _ => Err(format!("unknown pattern mode {s:?} (expected any or all)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceRef {
    pub kind: TaintKind,
    pub pc: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStep {
    pub pc: usize,
    pub op: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaintTrace {
    pub pattern: Pattern,
    pub sink_pc: usize,
    /// From the source instruction to the transfer.
    pub steps: Vec<ChainStep>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub id: String,
    pub call_pc: usize,
    pub patterns: BTreeSet<Pattern>,
    /// The transfer is a `SELFDESTRUCT`, not a `CALL`.
    pub extended: bool,
    pub sources: BTreeSet<SourceRef>,
    /// Tainted `JUMPI`s guarding the transfer.
    pub guards: BTreeSet<usize>,
    /// First run in which the transfer was reached with tainted data.
    pub run_index: u32,
    /// Block ids of a path reaching the transfer.
    pub witness: Vec<usize>,
    pub traces: Vec<TaintTrace>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnerabilityReport {
    pub contract: String,
    pub mode: PatternMode,
    pub findings: Vec<Finding>,
}

impl VulnerabilityReport {
    pub fn pattern_sites(&self) -> BTreeSet<(Pattern, usize)> {
        self.findings
            .iter()
            .flat_map(|f| f.patterns.iter().map(move |p| (*p, f.call_pc)))
            .collect()
    }
}

/// Instruction chain from the nearest taint source to `sink`, source
/// first. Breadth-first over operand links, so the chain is a shortest one.
pub fn taint_chain(sink: &Value) -> Vec<ChainStep> {
    let mut parent: HashMap<InstanceId, Value> = HashMap::new();
    let mut queue = VecDeque::from([sink.clone()]);
    let mut seen = std::collections::HashSet::from([sink.id]);
    let mut found = None;
    while let Some(v) = queue.pop_front() {
        if !v.own_sources.is_empty() {
            found = Some(v);
            break;
        }
        for child in v.operands.iter().chain(&v.mem_operands) {
            if child.is_tainted() && seen.insert(child.id) {
                parent.insert(child.id, v.clone());
                queue.push_back(child.clone());
            }
        }
    }
    let mut steps = Vec::new();
    let mut cur = found;
    while let Some(v) = cur {
        steps.push(ChainStep {
            pc: v.pc,
            op: v.producer.to_string(),
        });
        cur = parent.get(&v.id).cloned();
    }
    steps
}

fn trace_of(record: &SinkRecord) -> TaintTrace {
    let pattern = Pattern::of_sink(record.kind);
    let mut steps = taint_chain(&record.instance);
    if record.kind == SinkKind::GuardJumpI {
        steps.push(ChainStep {
            pc: record.sink_pc,
            op: "JUMPI".into(),
        });
    }
    steps.push(ChainStep {
        pc: record.call_pc,
        op: if record.extended {
            "SELFDESTRUCT"
        } else {
            "CALL"
        }
        .into(),
    });
    TaintTrace {
        pattern,
        sink_pc: record.sink_pc,
        steps,
    }
}

/// Groups sink records by transfer and keeps the transfers whose matched
/// patterns satisfy `mode`.
pub fn assemble_report<'a>(
    contract: &str,
    sinks: impl IntoIterator<Item = &'a SinkRecord>,
    mode: PatternMode,
) -> VulnerabilityReport {
    let mut by_call: BTreeMap<usize, Vec<&SinkRecord>> = BTreeMap::new();
    for r in sinks {
        by_call.entry(r.call_pc).or_default().push(r);
    }
    let mut findings = Vec::new();
    for (call_pc, records) in by_call {
        let patterns: BTreeSet<Pattern> =
            records.iter().map(|r| Pattern::of_sink(r.kind)).collect();
        if !mode.accepts(&patterns) {
            continue;
        }
        let first = records
            .iter()
            .min_by_key(|r| r.run_index)
            .expect("group is non-empty");
        let sources = records
            .iter()
            .flat_map(|r| r.taints.iter())
            .map(|s| SourceRef {
                kind: s.kind,
                pc: s.origin_pc,
            })
            .collect();
        let guards = records
            .iter()
            .filter(|r| r.kind == SinkKind::GuardJumpI)
            .map(|r| r.sink_pc)
            .collect();
        let mut traces: BTreeMap<(Pattern, usize), TaintTrace> = BTreeMap::new();
        for r in &records {
            traces
                .entry((Pattern::of_sink(r.kind), r.sink_pc))
                .or_insert_with(|| trace_of(r));
        }
        findings.push(Finding {
            id: format!("{contract}/call@{call_pc:#x}"),
            call_pc,
            patterns,
            extended: records.iter().any(|r| r.extended),
            sources,
            guards,
            run_index: first.run_index,
            witness: first.trail.clone(),
            traces: traces.into_values().collect(),
        });
    }
    VulnerabilityReport {
        contract: contract.to_string(),
        mode,
        findings,
    }
}
