//! Single-instruction semantics of the simulated EVM.

use std::collections::BTreeSet;

use crate::decoder::{Instruction, Opcode, Program};
use crate::engine::diag::{Diagnostic, DiagnosticKind};
use crate::engine::state::{MachineState, STACK_LIMIT};
use crate::engine::{InstanceFactory, NewInstance, Producer, Value};
use crate::memmodel::{AddressForm, MemoryNote, FMP_SLOT};
use crate::taint::{
    check_selfdestruct_sink, check_sinks_at_call, mark_source, SinkRecord, SourceMark, SourcePolicy,
};
use crate::word::{self, bool_word, U256};

/// Control effect of one instruction.
#[derive(Debug, Clone)]
pub enum Flow {
    Next,
    Jump { target: Value },
    Branch { target: Value, condition: Value },
    Halt(Opcode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathAbort {
    StackUnderflow,
    StackOverflow,
    InvalidOpcode,
}

impl PathAbort {
    pub fn diagnostic(self) -> DiagnosticKind {
        match self {
            PathAbort::StackUnderflow => DiagnosticKind::StackUnderflow,
            PathAbort::StackOverflow => DiagnosticKind::StackOverflow,
            PathAbort::InvalidOpcode => DiagnosticKind::InvalidOpcode,
        }
    }
}

/// Concrete EVM result of a foldable opcode, `None` for anything outside
/// the folding whitelist.
pub fn fold(op: Opcode, a: &[U256]) -> Option<U256> {
    let v = match op {
        Opcode::Add => a[0].wrapping_add(a[1]),
        Opcode::Sub => a[0].wrapping_sub(a[1]),
        Opcode::Mul => a[0].wrapping_mul(a[1]),
        Opcode::Div => word::div(a[0], a[1]),
        Opcode::Sdiv => word::sdiv(a[0], a[1]),
        Opcode::Mod => word::rem(a[0], a[1]),
        Opcode::Smod => word::smod(a[0], a[1]),
        Opcode::Addmod => word::addmod(a[0], a[1], a[2]),
        Opcode::Mulmod => word::mulmod(a[0], a[1], a[2]),
        Opcode::Exp => word::exp(a[0], a[1]),
        Opcode::And => a[0] & a[1],
        Opcode::Or => a[0] | a[1],
        Opcode::Xor => a[0] ^ a[1],
        Opcode::Not => !a[0],
        Opcode::Byte => word::byte(a[0], a[1]),
        Opcode::Shl => word::shl(a[0], a[1]),
        Opcode::Shr => word::shr(a[0], a[1]),
        Opcode::Sar => word::sar(a[0], a[1]),
        Opcode::Lt => bool_word(a[0] < a[1]),
        Opcode::Gt => bool_word(a[0] > a[1]),
        Opcode::Slt => bool_word(word::slt(a[0], a[1])),
        Opcode::Sgt => bool_word(word::slt(a[1], a[0])),
        Opcode::Eq => bool_word(a[0] == a[1]),
        Opcode::Iszero => bool_word(a[0].is_zero()),
        Opcode::Signextend => word::signextend(a[0], a[1]),
        _ => return None,
    };
    Some(v)
}

/// Per-run execution context shared by all paths.
pub struct Executor<'a> {
    pub program: &'a Program,
    pub policy: &'a SourcePolicy,
    pub run_index: u32,
    pub factory: InstanceFactory,
    pub sinks: Vec<SinkRecord>,
    pub diagnostics: BTreeSet<Diagnostic>,
}

impl<'a> Executor<'a> {
    pub fn new(program: &'a Program, policy: &'a SourcePolicy, run_index: u32) -> Self {
        Executor {
            program,
            policy,
            run_index,
            factory: InstanceFactory::new(),
            sinks: Vec::new(),
            diagnostics: BTreeSet::new(),
        }
    }

    pub fn note(&mut self, kind: DiagnosticKind, pc: usize) {
        self.diagnostics.insert(Diagnostic { kind, pc });
    }

    fn push(state: &mut MachineState, v: Value) -> Result<(), PathAbort> {
        if state.stack.len() >= STACK_LIMIT {
            return Err(PathAbort::StackOverflow);
        }
        state.stack.push(v);
        Ok(())
    }

    fn record_sinks(&mut self, state: &MachineState, mut found: Vec<SinkRecord>) {
        for r in &mut found {
            r.run_index = self.run_index;
            r.trail = state.trail.clone();
        }
        self.sinks.extend(found);
    }

    fn memory_notes(&mut self, notes: Vec<MemoryNote>, pc: usize) {
        for n in notes {
            let kind = match n {
                MemoryNote::UnwrittenRead => DiagnosticKind::UnwrittenMemoryRead,
                MemoryNote::StraddlingRead => DiagnosticKind::StraddlingMemoryRead,
            };
            self.note(kind, pc);
        }
    }

    pub fn step(
        &mut self,
        state: &mut MachineState,
        inst: &Instruction,
    ) -> Result<Flow, PathAbort> {
        let op = inst.opcode;
        let pc = inst.pc;
        state.pc = pc;
        match op {
            Opcode::Push(_) => {
                let value = inst.push_value().unwrap_or_default();
                let v = self.factory.constant(pc, value);
                Self::push(state, v)?;
                return Ok(Flow::Next);
            }
            Opcode::Dup(n) => {
                let v = state
                    .peek(n as usize - 1)
                    .cloned()
                    .ok_or(PathAbort::StackUnderflow)?;
                Self::push(state, v)?;
                return Ok(Flow::Next);
            }
            Opcode::Swap(n) => {
                let len = state.stack.len();
                let n = n as usize;
                if len <= n {
                    return Err(PathAbort::StackUnderflow);
                }
                state.stack.swap(len - 1, len - 1 - n);
                return Ok(Flow::Next);
            }
            Opcode::Invalid(_) => return Err(PathAbort::InvalidOpcode),
            _ => {}
        }

        let (pops, _) = op.stack_io();
        if state.stack.len() < pops {
            return Err(PathAbort::StackUnderflow);
        }
        let split = state.stack.len() - pops;
        let mut args = state.stack.split_off(split);
        args.reverse();

        match op {
            Opcode::Pop | Opcode::Jumpdest | Opcode::Log(_) => return Ok(Flow::Next),
            Opcode::Jump => {
                let target = args.swap_remove(0);
                return Ok(Flow::Jump { target });
            }
            Opcode::Jumpi => {
                let condition = args.pop().expect("two operands");
                let target = args.pop().expect("two operands");
                state.jumpi_guards.push((pc, condition.clone()));
                return Ok(Flow::Branch { target, condition });
            }
            Opcode::Stop | Opcode::Return | Opcode::Revert => return Ok(Flow::Halt(op)),
            Opcode::Selfdestruct => {
                let found = check_selfdestruct_sink(&state.jumpi_guards, pc, &args[0]);
                self.record_sinks(state, found);
                return Ok(Flow::Halt(op));
            }
            Opcode::Mstore | Opcode::Mstore8 => {
                let width = if op == Opcode::Mstore { 32 } else { 1 };
                state.memory.on_mstore(&args[0], args[1].clone(), width);
                return Ok(Flow::Next);
            }
            Opcode::Sstore => {
                state
                    .storage
                    .on_sstore(&args[0], args[1].clone(), pc, self.run_index);
                return Ok(Flow::Next);
            }
            Opcode::Tstore => {
                state
                    .transient
                    .on_sstore(&args[0], args[1].clone(), pc, self.run_index);
                return Ok(Flow::Next);
            }
            Opcode::Calldatacopy
            | Opcode::Codecopy
            | Opcode::Returndatacopy
            | Opcode::Extcodecopy => {
                let (dest_idx, len_idx) = if op == Opcode::Extcodecopy {
                    (1, 3)
                } else {
                    (0, 2)
                };
                let dest = args[dest_idx].clone();
                let len = args[len_idx].clone();
                let rest: Vec<Value> = args
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != dest_idx)
                    .map(|(_, v)| v.clone())
                    .collect();
                let data = self
                    .factory
                    .make(NewInstance::new(Producer::Op(op), pc).operands(rest));
                state.memory.on_copy(&dest, &len, data);
                return Ok(Flow::Next);
            }
            Opcode::Mcopy => {
                let region = state.memory.read_region(&args[1], &args[2]);
                let data = self.factory.make(
                    NewInstance::new(Producer::Op(op), pc)
                        .operands(vec![args[1].clone(), args[2].clone()])
                        .mem_operands(region),
                );
                state.memory.on_copy(&args[0], &args[2], data);
                return Ok(Flow::Next);
            }
            Opcode::Call | Opcode::Callcode | Opcode::Delegatecall | Opcode::Staticcall => {
                if op == Opcode::Call {
                    let found = check_sinks_at_call(&state.jumpi_guards, pc, &args[1], &args[2]);
                    self.record_sinks(state, found);
                }
                let (ret_off, ret_len) = if matches!(op, Opcode::Call | Opcode::Callcode) {
                    (5, 6)
                } else {
                    (4, 5)
                };
                let output = self.factory.unknown(pc);
                state.memory.on_copy(&args[ret_off], &args[ret_len], output);
                let flag = self.factory.make(NewInstance::new(Producer::Op(op), pc));
                Self::push(state, flag)?;
                return Ok(Flow::Next);
            }
            Opcode::Create | Opcode::Create2 => {
                let addr = self.factory.make(NewInstance::new(Producer::Op(op), pc));
                Self::push(state, addr)?;
                return Ok(Flow::Next);
            }
            _ => {}
        }

        let mut draft = NewInstance::new(Producer::Op(op), pc);
        match op {
            Opcode::Mload => {
                let (ops, notes) = state.memory.on_mload(&args[0], &mut self.factory, pc);
                self.memory_notes(notes, pc);
                draft.mem_operands = ops;
            }
            Opcode::Sload => {
                draft.mem_operands = state.storage.on_sload(&args[0], &mut self.factory, pc);
            }
            Opcode::Tload => {
                draft.mem_operands = state.transient.on_sload(&args[0], &mut self.factory, pc);
            }
            Opcode::Sha3 => {
                draft.mem_operands = state.memory.read_region(&args[0], &args[1]);
            }
            Opcode::Pc => draft.concrete = Some(U256::from(pc)),
            Opcode::Codesize => draft.concrete = Some(U256::from(self.program.bytecode.len())),
            _ => {
                let concrete: Option<Vec<U256>> = args.iter().map(|a| a.concrete).collect();
                draft.concrete = concrete.and_then(|vals| fold(op, &vals));
            }
        }
        let fmp_load = op == Opcode::Mload
            && matches!(state.memory.classify_address(&args[0]),
                AddressForm::Absolute(a) if a == U256::from(FMP_SLOT));
        match mark_source(self.policy, op, &args, pc, self.run_index) {
            SourceMark::Source(s) => draft.own_sources.push(s),
            SourceMark::Cleansed => draft.cleanse = true,
            SourceMark::None => {}
        }
        draft.operands = args;
        let v = self.factory.make(draft);
        if fmp_load {
            state.memory.register_fmp_load(&v);
        }
        Self::push(state, v)?;
        Ok(Flow::Next)
    }
}
