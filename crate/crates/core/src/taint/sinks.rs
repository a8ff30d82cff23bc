use serde::{Deserialize, Serialize};

use crate::engine::Value;
use crate::taint::TaintSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkKind {
    CallValue,
    CallToAddress,
    GuardJumpI,
}

/// A tainted argument or guard observed when a transfer executed.
#[derive(Debug, Clone)]
pub struct SinkRecord {
    pub kind: SinkKind,
    /// The `JUMPI` for guards, the transfer itself otherwise.
    pub sink_pc: usize,
    pub call_pc: usize,
    pub taints: TaintSet,
    /// Pcs of all `JUMPI`s evaluated on the path before the transfer.
    pub guard_trail: Vec<usize>,
    /// The sink is a `SELFDESTRUCT` beneficiary rather than a `CALL`.
    pub extended: bool,
    pub run_index: u32,
    /// Block ids of the path that reached the transfer.
    pub trail: Vec<usize>,
    /// Tainted instance that reached the sink.
    pub instance: Value,
}

fn record(
    kind: SinkKind,
    sink_pc: usize,
    call_pc: usize,
    instance: &Value,
    guards: &[(usize, Value)],
) -> SinkRecord {
    SinkRecord {
        kind,
        sink_pc,
        call_pc,
        taints: instance.taints.clone(),
        guard_trail: guards.iter().map(|(pc, _)| *pc).collect(),
        extended: false,
        run_index: 0,
        trail: Vec::new(),
        instance: instance.clone(),
    }
}

/// Sink checks for a `CALL` at `call_pc`. A call whose value is known to
/// be zero moves no Ether and is not checked.
pub fn check_sinks_at_call(
    guards: &[(usize, Value)],
    call_pc: usize,
    to: &Value,
    value: &Value,
) -> Vec<SinkRecord> {
    if value.concrete.is_some_and(|v| v.is_zero()) {
        return Vec::new();
    }
    let mut out = Vec::new();
    if value.is_tainted() {
        out.push(record(SinkKind::CallValue, call_pc, call_pc, value, guards));
    }
    if to.is_tainted() {
        out.push(record(
            SinkKind::CallToAddress,
            call_pc,
            call_pc,
            to,
            guards,
        ));
    }
    for (pc, cond) in guards {
        if cond.is_tainted() {
            out.push(record(SinkKind::GuardJumpI, *pc, call_pc, cond, guards));
        }
    }
    out
}

/// `SELFDESTRUCT` sends the whole balance to its beneficiary; a tainted
/// beneficiary is reported like a tainted `CALL` target.
pub fn check_selfdestruct_sink(
    guards: &[(usize, Value)],
    pc: usize,
    beneficiary: &Value,
) -> Vec<SinkRecord> {
    if !beneficiary.is_tainted() {
        return Vec::new();
    }
    let mut r = record(SinkKind::CallToAddress, pc, pc, beneficiary, guards);
    r.extended = true;
    vec![r]
}
