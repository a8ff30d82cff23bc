#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rngscan_core::taint::{SinkKind, TaintKind};
use rngscan_core::{analyze, EngineConfig, Program, RawBytecode};

pub type Sites = BTreeSet<(TaintKind, usize)>;

/// Straight-line bytecode builder that remembers where sources were placed.
#[derive(Default)]
pub struct Code {
    pub bytes: Vec<u8>,
}

impl Code {
    pub fn pc(&self) -> usize {
        self.bytes.len()
    }

    pub fn op(&mut self, byte: u8) -> usize {
        let pc = self.pc();
        self.bytes.push(byte);
        pc
    }

    pub fn push(&mut self, v: u64) {
        let be = v.to_be_bytes();
        let skip = be.iter().take_while(|b| **b == 0).count().min(7);
        let imm = &be[skip..];
        self.bytes.push(0x5f + imm.len() as u8);
        self.bytes.extend_from_slice(imm);
    }

    /// Pushes either a block-data source or a constant; returns its taint.
    pub fn value(&mut self, source: Option<TaintKind>, constant: u64) -> Sites {
        let byte = match source {
            None => {
                self.push(constant);
                return Sites::new();
            }
            Some(TaintKind::Blockhash) => {
                self.push(1);
                0x40
            }
            Some(TaintKind::Coinbase) => 0x41,
            Some(TaintKind::Timestamp) => 0x42,
            Some(TaintKind::Number) => 0x43,
            Some(TaintKind::Difficulty) => 0x44,
            Some(TaintKind::Gaslimit) => 0x45,
            Some(TaintKind::ModTime) => unreachable!("not an opcode"),
        };
        let pc = self.op(byte);
        [(source.unwrap(), pc)].into_iter().collect()
    }

    /// Sends the value on top of the stack with a `CALL`; returns its pc.
    pub fn send_top(&mut self) -> usize {
        // value | -> 0 0 0 0 value to gas
        for _ in 0..4 {
            self.op(0x5f);
        }
        self.op(0x84); // DUP5 brings the value up
        self.push(0x1234);
        self.op(0x5a);
        let pc = self.op(0xf1);
        self.op(0x50);
        self.op(0x50);
        pc
    }
}

pub const SOURCE_KINDS: [TaintKind; 6] = [
    TaintKind::Blockhash,
    TaintKind::Coinbase,
    TaintKind::Timestamp,
    TaintKind::Number,
    TaintKind::Difficulty,
    TaintKind::Gaslimit,
];

/// Taint sites reaching each `CALL`'s value argument.
pub fn call_value_taints(code: &[u8], config: &EngineConfig) -> BTreeMap<usize, Sites> {
    let program = Program::from_runtime(RawBytecode::new(code.to_vec())).unwrap();
    let analysis = analyze(&program, config);
    assert!(!analysis.incomplete());
    let mut out: BTreeMap<usize, Sites> = BTreeMap::new();
    for s in analysis.sinks().filter(|s| s.kind == SinkKind::CallValue) {
        out.entry(s.call_pc).or_default().extend(s.taints.sites());
    }
    out
}

pub fn single_run() -> EngineConfig {
    EngineConfig {
        max_runs: 1,
        ..EngineConfig::default()
    }
}

/// `n` values drawn from `strategy` with a fixed seed.
pub fn sample<S: proptest::strategy::Strategy>(strategy: S, n: usize) -> Vec<S::Value> {
    use proptest::strategy::ValueTree;
    use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
    let rng = TestRng::deterministic_rng(RngAlgorithm::ChaCha);
    let mut runner = TestRunner::new_with_rng(Config::default(), rng);
    (0..n)
        .map(|_| strategy.new_tree(&mut runner).unwrap().current())
        .collect()
}

/// Concrete-address memory programs and their byte-accurate oracle.
pub mod memory {
    use super::*;
    use proptest::prelude::*;

    const MEM: usize = 0x200;

    #[derive(Debug, Clone)]
    pub enum Step {
        Store {
            addr: u64,
            narrow: bool,
            source: Option<TaintKind>,
            constant: u64,
        },
        Load {
            addr: u64,
        },
    }

    fn source() -> impl Strategy<Value = Option<TaintKind>> {
        prop_oneof![
            1 => Just(None),
            3 => proptest::sample::select(SOURCE_KINDS.to_vec()).prop_map(Some),
        ]
    }

    pub fn unaligned_step() -> impl Strategy<Value = Step> {
        prop_oneof![
            3 => (0u64..0x180, any::<bool>(), source(), 1u64..1000).prop_map(|(addr, narrow, source, constant)| {
                Step::Store { addr, narrow, source, constant }
            }),
            2 => (0u64..0x180).prop_map(|addr| Step::Load { addr }),
        ]
    }

    pub fn aligned_step() -> impl Strategy<Value = Step> {
        prop_oneof![
            3 => (0u64..12, source(), 1u64..1000).prop_map(|(w, source, constant)| {
                Step::Store { addr: w * 32, narrow: false, source, constant }
            }),
            2 => (0u64..12).prop_map(|w| Step::Load { addr: w * 32 }),
        ]
    }

    /// Builds the program and runs the oracle alongside. Returns the code and
    /// the oracle's taint for each `CALL` pc.
    pub fn build(steps: &[Step]) -> (Vec<u8>, BTreeMap<usize, Sites>) {
        let mut code = Code::default();
        let mut bytes: Vec<Sites> = vec![Sites::new(); MEM];
        let mut expected = BTreeMap::new();
        for step in steps {
            match step {
                Step::Store {
                    addr,
                    narrow,
                    source,
                    constant,
                } => {
                    let taint = code.value(*source, *constant);
                    code.push(*addr);
                    code.op(if *narrow { 0x53 } else { 0x52 });
                    let width = if *narrow { 1 } else { 32 };
                    for b in &mut bytes[*addr as usize..*addr as usize + width] {
                        *b = taint.clone();
                    }
                }
                Step::Load { addr } => {
                    code.push(*addr);
                    code.op(0x51);
                    let call = code.send_top();
                    let seen: Sites = bytes[*addr as usize..*addr as usize + 32]
                        .iter()
                        .flatten()
                        .copied()
                        .collect();
                    expected.insert(call, seen);
                }
            }
        }
        code.op(0x00);
        (code.bytes, expected)
    }

    pub fn observed(code: &[u8], calls: impl Iterator<Item = usize>) -> BTreeMap<usize, Sites> {
        let mut found = call_value_taints(code, &single_run());
        calls
            .map(|pc| (pc, found.remove(&pc).unwrap_or_default()))
            .collect()
    }

    /// Checks one program: superset of the oracle, or equality if `exact`.
    pub fn check(steps: &[Step], exact: bool) -> Result<(), String> {
        let (code, expected) = build(steps);
        let got = observed(&code, expected.keys().copied());
        for (pc, want) in &expected {
            let have = &got[pc];
            let ok = if exact {
                have == want
            } else {
                have.is_superset(want)
            };
            if !ok {
                return Err(format!("call {pc:#x}: model {have:?}, oracle {want:?}"));
            }
        }
        Ok(())
    }

    pub fn programs(aligned: bool, n: usize) -> Vec<Vec<Step>> {
        if aligned {
            sample(proptest::collection::vec(aligned_step(), 1..24), n)
        } else {
            sample(proptest::collection::vec(unaligned_step(), 1..24), n)
        }
    }
}

/// Concrete-key storage programs and their map oracle.
pub mod storage {
    use super::*;
    use proptest::prelude::*;
    use rngscan_core::decoder::Opcode;
    use rngscan_core::engine::{InstanceFactory, NewInstance, Producer, Value};
    use rngscan_core::word::U256;

    #[derive(Debug, Clone)]
    pub enum Step {
        Store {
            key: u64,
            split: bool,
            source: Option<TaintKind>,
            constant: u64,
        },
        Load {
            key: u64,
            split: bool,
        },
    }

    pub fn step() -> impl Strategy<Value = Step> {
        let source = prop_oneof![
            1 => Just(None),
            2 => proptest::sample::select(SOURCE_KINDS.to_vec()).prop_map(Some),
        ];
        prop_oneof![
            3 => (0u64..8, any::<bool>(), source, 1u64..1000).prop_map(|(key, split, source, constant)| {
                Step::Store { key, split, source, constant }
            }),
            2 => (0u64..10, any::<bool>()).prop_map(|(key, split)| Step::Load { key, split }),
        ]
    }

    /// Pushes `key`, optionally as the sum of two constants.
    fn push_key(code: &mut Code, key: u64, split: bool) {
        if split && key > 0 {
            code.push(key - 1);
            code.push(1);
            code.op(0x01);
        } else {
            code.push(key);
        }
    }

    pub fn build(steps: &[Step]) -> (Vec<u8>, BTreeMap<usize, Sites>) {
        let mut code = Code::default();
        let mut map: BTreeMap<u64, Sites> = BTreeMap::new();
        let mut expected = BTreeMap::new();
        for s in steps {
            match s {
                Step::Store {
                    key,
                    split,
                    source,
                    constant,
                } => {
                    let taint = code.value(*source, *constant);
                    push_key(&mut code, *key, *split);
                    code.op(0x55);
                    map.insert(*key, taint);
                }
                Step::Load { key, split } => {
                    push_key(&mut code, *key, *split);
                    code.op(0x54);
                    let call = code.send_top();
                    expected.insert(call, map.get(key).cloned().unwrap_or_default());
                }
            }
        }
        code.op(0x00);
        (code.bytes, expected)
    }

    /// `SHA3(CALLER, slot) + delta_a + delta_b` with the offset split over two
    /// additions.
    pub fn mapping_key(f: &mut InstanceFactory, slot: u64, extra: u64) -> Value {
        let caller = f.make(NewInstance::new(Producer::Op(Opcode::Caller), 0));
        let s = f.constant(0, U256::from(slot));
        let h =
            f.make(NewInstance::new(Producer::Op(Opcode::Sha3), 0).mem_operands(vec![caller, s]));
        let three = f.constant(0, U256::from(3));
        let inner = f.make(NewInstance::new(Producer::Op(Opcode::Add), 0).operands(vec![h, three]));
        let rest = f.constant(0, U256::from(5 + extra));
        f.make(NewInstance::new(Producer::Op(Opcode::Add), 0).operands(vec![inner, rest]))
    }

    pub fn check(steps: &[Step]) -> Result<(), String> {
        let (code, expected) = build(steps);
        let mut found = call_value_taints(&code, &single_run());
        for (pc, want) in &expected {
            let have = found.remove(pc).unwrap_or_default();
            if &have != want {
                return Err(format!("call {pc:#x}: model {have:?}, oracle {want:?}"));
            }
        }
        Ok(())
    }

    pub fn programs(n: usize) -> Vec<Vec<Step>> {
        sample(proptest::collection::vec(step(), 1..24), n)
    }
}
