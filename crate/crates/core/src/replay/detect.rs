//! Attack detectors over replay traces.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::replay::fixture::TransactionRecord;
use crate::replay::interp::{DynSource, Event, ExecutionTrace, TxStatus};
use crate::taint::TaintKind;
use crate::word::{Address, HexWord, U256};

pub const DEFAULT_WINDOW: u64 = 6000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackKind {
    ManipulationOrPrediction,
    Rollback,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EvidenceStep {
    pub tx: String,
    /// Index into the trace's event list.
    pub event: usize,
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Evidence {
    /// Block-data sources seen on both sides.
    #[serde(skip_serializing_if = "BTreeSet::is_empty")]
    pub shared_sources: BTreeSet<DynSource>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<EvidenceStep>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AttackReport {
    pub kind: AttackKind,
    pub transactions: Vec<String>,
    pub caller: Address,
    pub target: Address,
    pub evidence: Evidence,
    /// Net wei moved from the target side to the caller side.
    pub loss: HexWord,
}

/// Addresses acting for each party: the party itself plus every contract
/// it created during the transaction, transitively.
#[derive(Debug, Clone)]
pub struct Parties {
    pub caller: BTreeSet<Address>,
    pub target: BTreeSet<Address>,
}

impl Parties {
    pub fn of(trace: &ExecutionTrace, caller: Address, target: Address) -> Parties {
        let mut c = BTreeSet::from([caller]);
        let mut t = BTreeSet::from([target]);
        for e in &trace.events {
            if let Event::Create {
                creator, created, ..
            } = e
            {
                if c.contains(creator) {
                    c.insert(*created);
                } else if t.contains(creator) {
                    t.insert(*created);
                }
            }
        }
        Parties {
            caller: c,
            target: t,
        }
    }
}

fn block_sources<'a>(
    sources: &'a BTreeSet<DynSource>,
    vulnerable: &'a BTreeSet<TaintKind>,
) -> impl Iterator<Item = DynSource> + 'a {
    sources.iter().filter_map(move |s| match s {
        DynSource::Block { kind, .. } if vulnerable.contains(kind) => Some(s.clone()),
        _ => None,
    })
}

/// Both sides' accumulated taint sets.
pub fn side_taints(
    trace: &ExecutionTrace,
    parties: &Parties,
    vulnerable: &BTreeSet<TaintKind>,
) -> (BTreeSet<DynSource>, BTreeSet<DynSource>) {
    let mut caller = BTreeSet::new();
    let mut target = BTreeSet::new();
    for e in &trace.events {
        match e {
            Event::JumpI { address, taint, .. } => {
                // A contract on both sides (self-call) counts for both.
                if parties.caller.contains(address) {
                    caller.extend(block_sources(taint, vulnerable));
                }
                if parties.target.contains(address) {
                    target.extend(block_sources(taint, vulnerable));
                }
            }
            Event::Call {
                from, to, taint, ..
            } => {
                if parties.caller.contains(from) && parties.target.contains(to) {
                    caller.extend(block_sources(taint, vulnerable));
                }
                if parties.target.contains(from) && parties.caller.contains(to) {
                    target.extend(block_sources(taint, vulnerable));
                }
            }
            _ => {}
        }
    }
    (caller, target)
}

/// Net wei moved from the target side to the caller side by committed
/// transfers, saturating at zero.
pub fn loss_of(trace: &ExecutionTrace, parties: &Parties) -> U256 {
    let mut gained = U256::ZERO;
    let mut paid = U256::ZERO;
    for e in &trace.events {
        if let Event::Transfer {
            frame,
            from,
            to,
            value,
        } = e
        {
            if !trace.committed(*frame) {
                continue;
            }
            if parties.target.contains(from) && parties.caller.contains(to) {
                gained = gained.saturating_add(*value);
            } else if parties.caller.contains(from) && parties.target.contains(to) {
                paid = paid.saturating_add(*value);
            }
        }
    }
    gained.saturating_sub(paid)
}

pub fn detect_manipulation(
    trace: &ExecutionTrace,
    caller: Address,
    target: Address,
    vulnerable: &BTreeSet<TaintKind>,
) -> Option<AttackReport> {
    let parties = Parties::of(trace, caller, target);
    let (c, t) = side_taints(trace, &parties, vulnerable);
    let shared: BTreeSet<DynSource> = c.intersection(&t).cloned().collect();
    if shared.is_empty() {
        return None;
    }
    Some(AttackReport {
        kind: AttackKind::ManipulationOrPrediction,
        transactions: vec![trace.tx_id.clone()],
        caller,
        target,
        evidence: Evidence {
            shared_sources: shared,
            steps: Vec::new(),
        },
        loss: HexWord(loss_of(trace, &parties)),
    })
}

fn step(trace: &ExecutionTrace, event: usize, description: String) -> EvidenceStep {
    EvidenceStep {
        tx: trace.tx_id.clone(),
        event,
        description,
    }
}

fn find_from<T>(
    trace: &ExecutionTrace,
    start: usize,
    mut pred: impl FnMut(&Event) -> Option<T>,
) -> Option<(usize, T)> {
    trace.events[start..]
        .iter()
        .enumerate()
        .find_map(|(i, e)| pred(e).map(|v| (start + i, v)))
}

/// Steps common to both shapes, starting after `start`: a caller balance
/// query, then a caller `JUMPI` whose condition carries that balance.
fn balance_guard(
    trace: &ExecutionTrace,
    parties: &Parties,
    start: usize,
) -> Option<Vec<EvidenceStep>> {
    let mut from = start;
    loop {
        let (qi, (pc, queried)) = find_from(trace, from, |e| match e {
            Event::BalanceQuery {
                address,
                queried,
                pc,
                ..
            } if parties.caller.contains(address) && parties.caller.contains(queried) => {
                Some((*pc, *queried))
            }
            _ => None,
        })?;
        let guard = find_from(trace, qi + 1, |e| match e {
            Event::JumpI {
                address, taint, pc, ..
            } if parties.caller.contains(address)
                && taint.contains(&DynSource::Balance { address: queried }) =>
            {
                Some(*pc)
            }
            _ => None,
        });
        if let Some((ji, jpc)) = guard {
            return Some(vec![
                step(
                    trace,
                    qi,
                    format!("caller queries balance of {queried} at pc {pc:#x}"),
                ),
                step(trace, ji, format!("balance guards JUMPI at pc {jpc:#x}")),
            ]);
        }
        from = qi + 1;
    }
}

fn invocations(trace: &ExecutionTrace, parties: &Parties) -> Vec<usize> {
    let mut out: Vec<usize> = trace
        .events
        .iter()
        .enumerate()
        .filter_map(|(i, e)| match e {
            Event::Call { from, to, .. }
                if parties.caller.contains(from) && parties.target.contains(to) =>
            {
                Some(i)
            }
            _ => None,
        })
        .collect();
    // A transaction sent by the caller straight to the target is itself
    // the invocation; frame 0 has no call event.
    if trace
        .frames
        .first()
        .is_some_and(|f| parties.caller.contains(&f.caller) && parties.target.contains(&f.address))
    {
        out.insert(0, 0);
    }
    out
}

/// The four rollback steps, if present: invocation, balance query, tainted
/// guard, and a `REVERT` by the caller.
pub fn match_rollback(trace: &ExecutionTrace, parties: &Parties) -> Option<Vec<EvidenceStep>> {
    for ci in invocations(trace, parties) {
        let Some(mut steps) = balance_guard(trace, parties, ci) else {
            continue;
        };
        let after = steps.last().expect("two steps").event + 1;
        let revert = find_from(trace, after, |e| match e {
            Event::Revert { address, pc, .. } if parties.caller.contains(address) => Some(*pc),
            _ => None,
        });
        if let Some((ri, pc)) = revert {
            let mut out = vec![step(trace, ci, "caller invokes target".into())];
            out.append(&mut steps);
            out.push(step(trace, ri, format!("caller reverts at pc {pc:#x}")));
            return Some(out);
        }
    }
    None
}

/// The four profit steps, if present: invocation, a committed payout from
/// target to caller, balance query and tainted guard.
pub fn match_profit(trace: &ExecutionTrace, parties: &Parties) -> Option<Vec<EvidenceStep>> {
    if trace.status != TxStatus::Success {
        return None;
    }
    for ci in invocations(trace, parties) {
        let payout = find_from(trace, ci, |e| match e {
            Event::Transfer {
                frame,
                from,
                to,
                value,
            } if trace.committed(*frame)
                && parties.target.contains(from)
                && parties.caller.contains(to) =>
            {
                Some(*value)
            }
            _ => None,
        });
        let Some((pi, value)) = payout else {
            continue;
        };
        let Some(mut steps) = balance_guard(trace, parties, pi + 1) else {
            continue;
        };
        let mut out = vec![
            step(trace, ci, "caller invokes target".into()),
            step(trace, pi, format!("target pays caller {}", HexWord(value))),
        ];
        out.append(&mut steps);
        return Some(out);
    }
    None
}

/// Pairs rollback and profit transactions of the same caller and target
/// whose block numbers differ by at most `window`. One report per profit
/// transaction.
pub fn detect_rollback(
    traces: &[(&TransactionRecord, &ExecutionTrace)],
    window: u64,
) -> Vec<AttackReport> {
    struct Matched<'a> {
        tx: &'a TransactionRecord,
        steps: Vec<EvidenceStep>,
        loss: U256,
    }
    let mut groups: BTreeMap<(Address, Address), (Vec<Matched>, Vec<Matched>)> = BTreeMap::new();
    for (tx, trace) in traces {
        let caller = tx.caller();
        let parties = Parties::of(trace, caller, tx.target);
        let entry = groups.entry((caller, tx.target)).or_default();
        if let Some(steps) = match_rollback(trace, &parties) {
            entry.0.push(Matched {
                tx,
                steps,
                loss: U256::ZERO,
            });
        }
        if let Some(steps) = match_profit(trace, &parties) {
            entry.1.push(Matched {
                tx,
                steps,
                loss: loss_of(trace, &parties),
            });
        }
    }
    let mut reports = Vec::new();
    for ((caller, target), (rollbacks, profits)) in groups {
        for p in &profits {
            let mut paired: Vec<&Matched> = rollbacks
                .iter()
                .filter(|r| r.tx.id != p.tx.id)
                .filter(|r| r.tx.block_number.abs_diff(p.tx.block_number) <= window)
                .collect();
            if paired.is_empty() {
                continue;
            }
            paired.push(p);
            paired
                .sort_by(|a, b| (a.tx.block_number, &a.tx.id).cmp(&(b.tx.block_number, &b.tx.id)));
            reports.push(AttackReport {
                kind: AttackKind::Rollback,
                transactions: paired.iter().map(|m| m.tx.id.clone()).collect(),
                caller,
                target,
                evidence: Evidence {
                    shared_sources: BTreeSet::new(),
                    steps: paired
                        .iter()
                        .flat_map(|m| m.steps.iter().cloned())
                        .collect(),
                },
                loss: HexWord(p.loss),
            });
        }
    }
    reports
}
