//! Simulated EVM executor: depth-first traversal over basic blocks with
//! stack-state snapshot pruning, resource bounds and cross-run storage
//! seeding.

mod diag;
mod exec;
mod state;
mod value;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::time::{Duration, Instant};

use crate::decoder::{Opcode, Program};
use crate::stormodel::{EntrySignature, StorageEntry};
use crate::taint::{PatternMode, SinkRecord, SourcePolicy, TaintSet};
use crate::word::usize_of;

pub use diag::{Diagnostic, DiagnosticKind};
pub use exec::{fold, Executor, Flow, PathAbort};
pub use state::{MachineState, STACK_LIMIT};
pub use value::{InstanceFactory, InstanceId, NewInstance, Producer, Shape, Value, ValueInstance};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    pub max_paths: usize,
    pub max_blocks_per_path: usize,
    pub max_runs: u32,
    pub timeout: Duration,
    pub pattern_mode: PatternMode,
    /// Skip blocks whose entry snapshot was seen before.
    pub pruning: bool,
    pub sources: SourcePolicy,
    /// Keep the block trail of every explored path in the result.
    pub keep_trails: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            max_paths: 65_536,
            max_blocks_per_path: 2_048,
            max_runs: 3,
            timeout: Duration::from_secs(3_600),
            pattern_mode: PatternMode::Any,
            pruning: true,
            sources: SourcePolicy::default(),
            keep_trails: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{field} must be at least 1")]
pub struct ConfigError {
    pub field: &'static str,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let checks = [
            ("max_paths", self.max_paths >= 1),
            ("max_blocks_per_path", self.max_blocks_per_path >= 1),
            ("max_runs", self.max_runs >= 1),
            ("timeout", !self.timeout.is_zero()),
        ];
        match checks.into_iter().find(|(_, ok)| !ok) {
            Some((field, _)) => Err(ConfigError { field }),
            None => Ok(()),
        }
    }
}

/// Entry state of a block as seen by the pruning rule.
///
/// The jump addresses are the concrete stack values that name a
/// `JUMPDEST`; the taint profile lists each slot's taint sources,
/// bottom first. The remaining fields carry the taint held outside the
/// stack (evaluated guards, memory, storage), so a pruned path can not
/// hide a sink the earlier path did not have.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StackSnapshot {
    pub block: usize,
    pub jump_addresses: BTreeSet<usize>,
    pub taint_profile: Vec<TaintSet>,
    pub guard_taints: TaintSet,
    pub memory_taints: TaintSet,
    pub storage_taints: TaintSet,
}

impl StackSnapshot {
    pub fn capture(program: &Program, block: usize, state: &MachineState) -> Self {
        let jump_addresses = state
            .stack
            .iter()
            .filter_map(|v| v.concrete.and_then(usize_of))
            .filter(|pc| program.is_jumpdest(*pc))
            .collect();
        let taint_profile = state.stack.iter().map(|v| v.taints.clone()).collect();
        let mut guard_taints = TaintSet::new();
        for (_, cond) in &state.jumpi_guards {
            guard_taints.extend_from(&cond.taints);
        }
        let mut storage_taints = state.storage.taint_summary();
        storage_taints.extend_from(&state.transient.taint_summary());
        StackSnapshot {
            block,
            jump_addresses,
            taint_profile,
            guard_taints,
            memory_taints: state.memory.taint_summary(),
            storage_taints,
        }
    }
}

pub fn snapshot_equal(s1: &StackSnapshot, sh: &StackSnapshot) -> bool {
    s1 == sh
}

/// How a path ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathEnd {
    Halted(Opcode),
    /// Ran past the last instruction (an implicit `STOP`).
    FellOff,
    Aborted(DiagnosticKind),
    Pruned,
    /// Hit the per-path block bound.
    Truncated,
    /// Stopped by the timeout.
    Cut,
}

impl PathEnd {
    /// The path's storage writes would persist.
    pub fn commits(self) -> bool {
        matches!(
            self,
            PathEnd::FellOff
                | PathEnd::Halted(Opcode::Stop | Opcode::Return | Opcode::Selfdestruct)
        )
    }
}

#[derive(Debug, Clone)]
pub struct PathRecord {
    pub end: PathEnd,
    pub blocks: usize,
    pub trail: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct Counters {
    pub paths_started: usize,
    pub blocks_executed: usize,
    pub blocks_pruned: usize,
    pub paths_truncated: usize,
    pub instances: u64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_index: u32,
    /// A global bound (path count or timeout) stopped exploration early.
    pub incomplete: bool,
    pub paths: Vec<PathRecord>,
    pub sinks: Vec<SinkRecord>,
    pub diagnostics: BTreeSet<Diagnostic>,
    pub counters: Counters,
    /// Tainted storage entries of committing paths, deduplicated.
    pub retained: Vec<StorageEntry>,
}

fn signatures(entries: &[StorageEntry]) -> BTreeSet<EntrySignature> {
    entries.iter().map(StorageEntry::signature).collect()
}

fn resolve_target(program: &Program, target: &Value) -> Result<usize, DiagnosticKind> {
    match target.concrete {
        None => Err(DiagnosticKind::UnresolvedJump),
        Some(t) => usize_of(t)
            .filter(|pc| program.is_jumpdest(*pc))
            .ok_or(DiagnosticKind::InvalidJumpTarget),
    }
}

/// Successor blocks of a block that ended with `flow`. `None` stands for
/// running off the end of the code.
pub fn resolve_jump(
    program: &Program,
    block_end: usize,
    flow: &Flow,
) -> Result<Vec<Option<usize>>, DiagnosticKind> {
    let fall = || Some(block_end).filter(|pc| program.blocks.contains_key(pc));
    Ok(match flow {
        Flow::Halt(_) => Vec::new(),
        Flow::Next => vec![fall()],
        Flow::Jump { target } => vec![Some(resolve_target(program, target)?)],
        Flow::Branch { target, condition } => match condition.concrete {
            Some(c) if c.is_zero() => vec![fall()],
            Some(_) => vec![Some(resolve_target(program, target)?)],
            // An unusable target leaves only the fall-through feasible.
            None => match resolve_target(program, target) {
                Ok(t) => vec![Some(t), fall()],
                Err(_) => vec![fall()],
            },
        },
    })
}

struct Work {
    state: MachineState,
    block: Option<usize>,
}

/// Depth-first exploration of all paths from block 0 for one run.
pub fn execute_paths(
    program: &Program,
    config: &EngineConfig,
    run_index: u32,
    seed: &[StorageEntry],
    deadline: Instant,
) -> RunResult {
    let mut ex = Executor::new(program, &config.sources, run_index);
    let mut history: HashMap<usize, HashSet<StackSnapshot>> = HashMap::new();
    let mut paths = Vec::new();
    let mut counters = Counters::default();
    let mut incomplete = false;
    let mut retained: BTreeMap<EntrySignature, StorageEntry> = BTreeMap::new();

    let mut work = Vec::new();
    if program.blocks.contains_key(&0) {
        work.push(Work {
            state: MachineState::with_storage(seed),
            block: Some(0),
        });
        counters.paths_started = 1;
    }

    while let Some(Work { mut state, block }) = work.pop() {
        let mut current = block;
        let end = loop {
            let Some(block_id) = current else {
                break PathEnd::FellOff;
            };
            if Instant::now() >= deadline {
                incomplete = true;
                ex.note(DiagnosticKind::Timeout, block_id);
                break PathEnd::Cut;
            }
            if state.trail.len() >= config.max_blocks_per_path {
                counters.paths_truncated += 1;
                ex.note(DiagnosticKind::PathBlockLimit, block_id);
                break PathEnd::Truncated;
            }
            let block = &program.blocks[&block_id];
            if config.pruning {
                let snap = StackSnapshot::capture(program, block_id, &state);
                if !history.entry(block_id).or_default().insert(snap) {
                    counters.blocks_pruned += 1;
                    break PathEnd::Pruned;
                }
            }
            state.trail.push(block_id);
            counters.blocks_executed += 1;

            let mut flow = Flow::Next;
            let mut abort = None;
            for inst in &block.instructions {
                match ex.step(&mut state, inst) {
                    Ok(f) => flow = f,
                    Err(a) => {
                        abort = Some((a, inst.pc));
                        break;
                    }
                }
            }
            if let Some((a, pc)) = abort {
                ex.note(a.diagnostic(), pc);
                break PathEnd::Aborted(a.diagnostic());
            }
            if let Flow::Halt(op) = flow {
                break PathEnd::Halted(op);
            }
            let jump_pc = block.last().pc;
            let successors = match resolve_jump(program, block.end_pc(), &flow) {
                Ok(s) => s,
                Err(kind) => {
                    ex.note(kind, jump_pc);
                    break PathEnd::Aborted(kind);
                }
            };
            if let Flow::Branch { target, condition } = &flow {
                if condition.concrete.is_none() {
                    if let Err(kind) = resolve_target(program, target) {
                        ex.note(kind, jump_pc);
                    }
                }
            }
            let mut succ = successors.into_iter();
            current = succ.next().flatten();
            if let Some(alt) = succ.next() {
                if counters.paths_started >= config.max_paths {
                    incomplete = true;
                    ex.note(DiagnosticKind::PathLimit, jump_pc);
                } else {
                    counters.paths_started += 1;
                    work.push(Work {
                        state: state.clone(),
                        block: alt,
                    });
                }
            }
        };
        if end.commits() {
            for e in state.storage.retain_tainted() {
                retained.entry(e.signature()).or_insert(e);
            }
        }
        paths.push(PathRecord {
            end,
            blocks: state.trail.len(),
            trail: config.keep_trails.then(|| state.trail.clone()),
        });
    }

    counters.instances = ex.factory.minted();
    RunResult {
        run_index,
        incomplete,
        paths,
        sinks: ex.sinks,
        diagnostics: ex.diagnostics,
        counters,
        retained: retained.into_values().collect(),
    }
}

/// All runs of one contract.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub runs: Vec<RunResult>,
    /// The retained storage stopped changing before `max_runs` was reached.
    pub fixpoint: bool,
}

impl Analysis {
    pub fn incomplete(&self) -> bool {
        self.runs.iter().any(|r| r.incomplete)
    }

    pub fn sinks(&self) -> impl Iterator<Item = &SinkRecord> {
        self.runs.iter().flat_map(|r| r.sinks.iter())
    }

    pub fn diagnostics(&self) -> BTreeSet<Diagnostic> {
        self.runs
            .iter()
            .flat_map(|r| r.diagnostics.iter().copied())
            .collect()
    }

    pub fn counters(&self) -> Counters {
        let mut total = Counters::default();
        for r in &self.runs {
            total.paths_started += r.counters.paths_started;
            total.blocks_executed += r.counters.blocks_executed;
            total.blocks_pruned += r.counters.blocks_pruned;
            total.paths_truncated += r.counters.paths_truncated;
            total.instances += r.counters.instances;
        }
        total
    }
}

/// Runs the program repeatedly, seeding each run's storage with the
/// tainted entries the previous run left behind, until no tainted entry
/// is left, the retained set stops changing, or `max_runs` is reached.
pub fn analyze(program: &Program, config: &EngineConfig) -> Analysis {
    let deadline = Instant::now() + config.timeout;
    let mut runs: Vec<RunResult> = Vec::new();
    let mut seed: Vec<StorageEntry> = Vec::new();
    let mut fixpoint = false;
    for run_index in 1..=config.max_runs {
        let result = execute_paths(program, config, run_index, &seed, deadline);
        let retained = signatures(&result.retained);
        let timed_out = result
            .diagnostics
            .iter()
            .any(|d| d.kind == DiagnosticKind::Timeout);
        let next_seed = result.retained.clone();
        runs.push(result);
        if retained.is_empty() || retained == signatures(&seed) {
            fixpoint = true;
            break;
        }
        if timed_out {
            break;
        }
        seed = next_seed;
    }
    Analysis { runs, fixpoint }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::decoder::RawBytecode;
    use crate::taint::TaintKind;

    fn program(src: &str) -> Program {
        let code = assemble(src).unwrap().code;
        Program::from_bytecode_unchecked(RawBytecode::new(code))
    }

    fn far() -> Instant {
        Instant::now() + Duration::from_secs(60)
    }

    fn snap(p: &Program, stack: Vec<Value>) -> StackSnapshot {
        let state = MachineState {
            stack,
            ..MachineState::new()
        };
        StackSnapshot::capture(p, 0, &state)
    }

    #[test]
    fn snapshot_rules() {
        let p = program("PUSH1 4 JUMP STOP dest: JUMPDEST STOP");
        let mut f = InstanceFactory::new();
        let a = f.constant(0, 4u64.try_into().unwrap());
        let b = f.constant(0, 9u64.try_into().unwrap());
        let s1 = snap(&p, vec![a.clone(), b.clone()]);
        let s2 = snap(&p, vec![a.clone(), b.clone()]);
        assert!(snapshot_equal(&s1, &s2));

        let mut ts = NewInstance::new(Producer::Op(Opcode::Timestamp), 1);
        ts.own_sources.push(crate::taint::TaintSource {
            kind: TaintKind::Timestamp,
            origin_pc: 1,
            run_index: 1,
        });
        let t = f.make(ts);
        let s3 = snap(&p, vec![a.clone(), t]);
        assert!(!snapshot_equal(&s1, &s3));

        // 9 is not a JUMPDEST, 4 is.
        let c = f.constant(0, 3u64.try_into().unwrap());
        let s4 = snap(&p, vec![c, b.clone()]);
        assert!(!snapshot_equal(&s1, &s4));
        assert_eq!(
            s1.jump_addresses.iter().copied().collect::<Vec<_>>(),
            vec![4]
        );
    }

    #[test]
    fn jump_resolution() {
        let p = program("PUSH1 3 JUMP dest: JUMPDEST STOP");
        let cfg = EngineConfig {
            keep_trails: true,
            ..EngineConfig::default()
        };
        let r = execute_paths(&p, &cfg, 1, &[], far());
        assert_eq!(r.paths.len(), 1);
        assert_eq!(r.paths[0].trail.as_deref(), Some(&[0, 3][..]));
        assert_eq!(r.paths[0].end, PathEnd::Halted(Opcode::Stop));

        let bad = program("PUSH1 2 JUMP STOP");
        let r = execute_paths(&bad, &cfg, 1, &[], far());
        assert_eq!(
            r.paths[0].end,
            PathEnd::Aborted(DiagnosticKind::InvalidJumpTarget)
        );

        let unresolved = program("CALLVALUE JUMP");
        let r = execute_paths(&unresolved, &cfg, 1, &[], far());
        assert_eq!(
            r.paths[0].end,
            PathEnd::Aborted(DiagnosticKind::UnresolvedJump)
        );
        assert!(r.diagnostics.contains(&Diagnostic {
            kind: DiagnosticKind::UnresolvedJump,
            pc: 1
        }));
    }

    #[test]
    fn symbolic_branch_explores_taken_first() {
        let p = program("CALLVALUE PUSH @t JUMPI STOP t: JUMPDEST STOP");
        let cfg = EngineConfig {
            keep_trails: true,
            ..EngineConfig::default()
        };
        let r = execute_paths(&p, &cfg, 1, &[], far());
        let trails: Vec<_> = r.paths.iter().map(|p| p.trail.clone().unwrap()).collect();
        assert_eq!(trails, vec![vec![0, 6], vec![0, 5]]);
    }

    #[test]
    fn concrete_branch_follows_one_arm() {
        let p = program("PUSH1 0 PUSH @t JUMPI STOP t: JUMPDEST STOP");
        let r = execute_paths(&p, &EngineConfig::default(), 1, &[], far());
        assert_eq!(r.paths.len(), 1);
    }

    #[test]
    fn symbolic_loop_terminates_with_pruning() {
        let src = "
            PUSH1 0
            head: JUMPDEST
            PUSH1 1 ADD
            DUP1 CALLDATALOAD PUSH @head JUMPI
            STOP";
        let p = program(src);
        let r = execute_paths(&p, &EngineConfig::default(), 1, &[], far());
        assert!(!r.incomplete);
        assert!(r.counters.blocks_pruned >= 1);
        let unpruned = EngineConfig {
            pruning: false,
            max_blocks_per_path: 64,
            ..EngineConfig::default()
        };
        let r2 = execute_paths(&p, &unpruned, 1, &[], far());
        assert!(r2.counters.paths_started > r.counters.paths_started);
        assert!(r2.counters.paths_truncated >= 1);
    }

    #[test]
    fn path_limit_marks_incomplete() {
        let src = "
            CALLVALUE PUSH @a JUMPI a: JUMPDEST
            CALLVALUE PUSH @b JUMPI b: JUMPDEST
            CALLVALUE PUSH @c JUMPI c: JUMPDEST STOP";
        let p = program(src);
        let cfg = EngineConfig {
            max_paths: 3,
            ..EngineConfig::default()
        };
        let r = execute_paths(&p, &cfg, 1, &[], far());
        assert!(r.incomplete);
        assert!(r.counters.paths_started <= 3);
    }

    #[test]
    fn timeout_keeps_partial_results() {
        let p = program("TIMESTAMP PUSH1 1 CALLER PUSH1 0 CALL STOP");
        let r = execute_paths(&p, &EngineConfig::default(), 1, &[], Instant::now());
        assert!(r.incomplete);
        assert!(r.sinks.is_empty());
    }

    #[test]
    fn config_bounds() {
        assert!(EngineConfig::default().validate().is_ok());
        let bad = EngineConfig {
            max_runs: 0,
            ..EngineConfig::default()
        };
        assert_eq!(bad.validate().unwrap_err().field, "max_runs");
    }

    #[test]
    fn rerun_skipped_without_tainted_stores() {
        let p = program("PUSH1 1 PUSH1 0 SSTORE STOP");
        let a = analyze(&p, &EngineConfig::default());
        assert_eq!(a.runs.len(), 1);
        assert!(a.fixpoint);
    }

    #[test]
    fn tainted_store_reaches_fixpoint_on_second_run() {
        let p = program("TIMESTAMP PUSH1 0 SSTORE STOP");
        let a = analyze(&p, &EngineConfig::default());
        assert_eq!(a.runs.len(), 2);
        assert!(a.fixpoint);
        assert_eq!(
            signatures(&a.runs[0].retained),
            signatures(&a.runs[1].retained)
        );
    }

    #[test]
    fn reverted_paths_retain_nothing() {
        let p = program("TIMESTAMP PUSH1 0 SSTORE PUSH1 0 DUP1 REVERT");
        let a = analyze(&p, &EngineConfig::default());
        assert!(a.runs[0].retained.is_empty());
    }
}
