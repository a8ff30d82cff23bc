use crate::engine::Value;
use crate::memmodel::MemoryModel;
use crate::stormodel::{StorageEntry, StorageModel};

pub const STACK_LIMIT: usize = 1024;

/// Per-path simulated EVM state. Cloned at every fork.
#[derive(Debug, Clone, Default)]
pub struct MachineState {
    /// Top of stack at the end.
    pub stack: Vec<Value>,
    pub memory: MemoryModel,
    pub storage: StorageModel,
    pub transient: StorageModel,
    pub pc: usize,
    /// Ids of the blocks executed so far.
    pub trail: Vec<usize>,
    /// Every `JUMPI` condition evaluated on this path, in order.
    pub jumpi_guards: Vec<(usize, Value)>,
}

impl MachineState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_storage(seed: &[StorageEntry]) -> Self {
        MachineState {
            storage: StorageModel::seeded(seed),
            ..Self::default()
        }
    }

    /// Value `depth` slots below the top (0 is the top).
    pub fn peek(&self, depth: usize) -> Option<&Value> {
        self.stack.iter().rev().nth(depth)
    }
}
