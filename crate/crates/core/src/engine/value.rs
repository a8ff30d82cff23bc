use std::fmt;
use std::sync::Arc;

use sha3::{Digest, Keccak256};

use crate::decoder::Opcode;
use crate::taint::{TaintSet, TaintSource};
use crate::word::{word_to_be_bytes, word_to_hex, U256};

/// Shared handle to an immutable instance. Instances form a DAG through
/// their operand links and are shared freely between forked states.
pub type Value = Arc<ValueInstance>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstanceId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Producer {
    Op(Opcode),
    /// PUSH immediate.
    Const,
    /// Data the simulation does not model.
    Unknown,
}

impl fmt::Display for Producer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Producer::Op(op) => write!(f, "{op}"),
            Producer::Const => f.write_str("CONST"),
            Producer::Unknown => f.write_str("UNKNOWN"),
        }
    }
}

/// Structural fingerprint of an instance tree. Equal trees have equal
/// shapes; instances whose value is not a function of their tree
/// (external call results, `MSIZE`, unknown data) get a shape unique to
/// their id.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Shape(pub [u8; 16]);

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Shape({})", hex::encode(&self.0[..6]))
    }
}

/// Result of executing one instruction.
#[derive(Debug)]
pub struct ValueInstance {
    pub id: InstanceId,
    pub producer: Producer,
    pub pc: usize,
    /// Stack operands in pop order (top of stack first).
    pub operands: Vec<Value>,
    /// Values read through memory or storage (`MLOAD`, `SHA3`, `SLOAD`, ...).
    pub mem_operands: Vec<Value>,
    pub concrete: Option<U256>,
    pub taints: TaintSet,
    /// Sources introduced by this instance itself.
    pub own_sources: Vec<TaintSource>,
    shape: Shape,
    volatile: bool,
    from_timestamp: bool,
}

impl ValueInstance {
    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// The tree contains a value that can change between executions of the
    /// same code (`PC`, `MSIZE`, `GAS`).
    pub fn is_volatile(&self) -> bool {
        self.volatile
    }

    /// Some node of the tree is a `TIMESTAMP` instance.
    pub fn derives_from_timestamp(&self) -> bool {
        self.from_timestamp
    }

    pub fn is_tainted(&self) -> bool {
        !self.taints.is_empty()
    }

    pub fn opcode(&self) -> Option<Opcode> {
        match self.producer {
            Producer::Op(op) => Some(op),
            _ => None,
        }
    }

    /// Compact rendering of the instance tree, cut off at `depth`.
    pub fn render(&self, depth: usize) -> String {
        if let Some(c) = self.concrete {
            return word_to_hex(c);
        }
        let name = self.producer.to_string();
        let children: Vec<&Value> = self.operands.iter().chain(&self.mem_operands).collect();
        if children.is_empty() {
            return name;
        }
        if depth == 0 {
            return format!("{name}(..)");
        }
        let shown: Vec<String> = children
            .iter()
            .take(4)
            .map(|c| c.render(depth - 1))
            .collect();
        let more = if children.len() > 4 { ", .." } else { "" };
        format!("{name}({}{more})", shown.join(", "))
    }
}

impl fmt::Display for ValueInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(3))
    }
}

/// Parameters for a new instance.
pub struct NewInstance {
    pub producer: Producer,
    pub pc: usize,
    pub operands: Vec<Value>,
    pub mem_operands: Vec<Value>,
    pub concrete: Option<U256>,
    pub own_sources: Vec<TaintSource>,
    /// Drop inherited taint (used for values known to be unpredictable).
    pub cleanse: bool,
}

impl NewInstance {
    pub fn new(producer: Producer, pc: usize) -> Self {
        NewInstance {
            producer,
            pc,
            operands: Vec::new(),
            mem_operands: Vec::new(),
            concrete: None,
            own_sources: Vec::new(),
            cleanse: false,
        }
    }

    pub fn operands(mut self, operands: Vec<Value>) -> Self {
        self.operands = operands;
        self
    }

    pub fn mem_operands(mut self, mem_operands: Vec<Value>) -> Self {
        self.mem_operands = mem_operands;
        self
    }

    pub fn concrete(mut self, concrete: Option<U256>) -> Self {
        self.concrete = concrete;
        self
    }
}

/// Whether an opcode's result is determined by its operand tree.
fn is_structural(op: Opcode) -> bool {
    !matches!(
        op,
        Opcode::Call
            | Opcode::Callcode
            | Opcode::Delegatecall
            | Opcode::Staticcall
            | Opcode::Create
            | Opcode::Create2
            | Opcode::Gas
            | Opcode::Msize
            | Opcode::Returndatasize
    )
}

fn is_volatile_op(op: Opcode) -> bool {
    matches!(op, Opcode::Pc | Opcode::Msize | Opcode::Gas)
}

/// Mints instances with ids unique within one analysis.
#[derive(Debug, Default)]
pub struct InstanceFactory {
    next_id: u64,
}

impl InstanceFactory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn minted(&self) -> u64 {
        self.next_id
    }

    pub fn make(&mut self, draft: NewInstance) -> Value {
        let id = InstanceId(self.next_id);
        self.next_id += 1;

        let mut taints = TaintSet::new();
        if !draft.cleanse {
            for v in draft.operands.iter().chain(&draft.mem_operands) {
                taints.extend_from(&v.taints);
            }
        }
        for s in &draft.own_sources {
            taints.insert(*s);
        }

        let children = || draft.operands.iter().chain(&draft.mem_operands);
        let volatile = matches!(draft.producer, Producer::Op(op) if is_volatile_op(op))
            || children().any(|v| v.volatile);
        let from_timestamp = draft.producer == Producer::Op(Opcode::Timestamp)
            || children().any(|v| v.from_timestamp);

        let mut hasher = Keccak256::new();
        match (draft.producer, draft.concrete) {
            (_, Some(c)) => {
                hasher.update(b"c");
                hasher.update(word_to_be_bytes(c));
            }
            (Producer::Op(op), None) if is_structural(op) => {
                hasher.update(b"o");
                hasher.update([op.byte()]);
                // A hash is identified by the words it covers, not by where
                // in memory they were laid out.
                let skip = usize::from(op == Opcode::Sha3);
                let shaped = draft.operands.get(skip..).unwrap_or(&[]);
                hasher.update((shaped.len() as u32).to_be_bytes());
                for v in shaped {
                    hasher.update(v.shape.0);
                }
                hasher.update(b"|");
                for v in &draft.mem_operands {
                    hasher.update(v.shape.0);
                }
            }
            _ => {
                hasher.update(b"u");
                hasher.update(id.0.to_be_bytes());
            }
        }
        let digest = hasher.finalize();
        let mut shape = [0u8; 16];
        shape.copy_from_slice(&digest[..16]);

        Arc::new(ValueInstance {
            id,
            producer: draft.producer,
            pc: draft.pc,
            operands: draft.operands,
            mem_operands: draft.mem_operands,
            concrete: draft.concrete,
            taints,
            own_sources: draft.own_sources,
            shape: Shape(shape),
            volatile,
            from_timestamp,
        })
    }

    pub fn constant(&mut self, pc: usize, value: U256) -> Value {
        self.make(NewInstance::new(Producer::Const, pc).concrete(Some(value)))
    }

    pub fn unknown(&mut self, pc: usize) -> Value {
        self.make(NewInstance::new(Producer::Unknown, pc))
    }
}
