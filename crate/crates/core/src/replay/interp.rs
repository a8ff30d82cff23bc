//! Concrete EVM interpreter with shadow taint labels.
//!
//! Every stack word, memory byte, storage slot and call/return data byte
//! carries a label: an interned set of [`DynSource`]s. Labels propagate as
//! the union of the inputs of each instruction. Gas is not metered; a step
//! bound keeps runaway loops finite.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::decoder::Opcode;
use crate::replay::fixture::{Fixture, TransactionRecord};
use crate::taint::TaintKind;
use crate::word::{
    self, bool_word, hex_word, keccak256, word_from_be_slice, word_to_be_bytes, Address, U256,
};

const CALL_DEPTH_LIMIT: usize = 1024;
const STACK_LIMIT: usize = 1024;
const MEMORY_LIMIT: usize = 1 << 24;
const MAX_CODE_SIZE: usize = 24_576;
const GAS_READING: u64 = 30_000_000;
const CHAIN_ID: u64 = 1;

/// Origin of dynamic taint.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DynSource {
    /// A block-data read. `detail` identifies the datum (the value read, or
    /// the block number for `BLOCKHASH`) so that reads of the same datum in
    /// different contracts carry the same label.
    Block {
        kind: TaintKind,
        #[serde(with = "hex_word")]
        detail: U256,
    },
    /// A balance query of `address`.
    Balance { address: Address },
}

impl fmt::Display for DynSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynSource::Block { kind, detail } => {
                write!(f, "{kind}({})", word::word_to_hex(*detail))
            }
            DynSource::Balance { address } => write!(f, "BALANCE({address})"),
        }
    }
}

pub type TaintLabels = Arc<BTreeSet<DynSource>>;

type Label = u32;
const CLEAN: Label = 0;

/// Interned label sets with memoized unions.
#[derive(Debug, Clone)]
struct Labels {
    sets: Vec<TaintLabels>,
    index: HashMap<TaintLabels, Label>,
    unions: HashMap<(Label, Label), Label>,
}

impl Labels {
    fn new() -> Self {
        let empty: TaintLabels = Arc::new(BTreeSet::new());
        Labels {
            sets: vec![empty.clone()],
            index: HashMap::from([(empty, CLEAN)]),
            unions: HashMap::new(),
        }
    }

    fn intern(&mut self, set: BTreeSet<DynSource>) -> Label {
        let set = Arc::new(set);
        if let Some(id) = self.index.get(&set) {
            return *id;
        }
        let id = self.sets.len() as Label;
        self.sets.push(set.clone());
        self.index.insert(set, id);
        id
    }

    fn single(&mut self, source: DynSource) -> Label {
        self.intern(BTreeSet::from([source]))
    }

    fn union(&mut self, a: Label, b: Label) -> Label {
        if a == b || b == CLEAN {
            return a;
        }
        if a == CLEAN {
            return b;
        }
        let key = (a.min(b), a.max(b));
        if let Some(id) = self.unions.get(&key) {
            return *id;
        }
        let mut set = (*self.sets[a as usize]).clone();
        set.extend(self.sets[b as usize].iter().cloned());
        let id = self.intern(set);
        self.unions.insert(key, id);
        id
    }

    fn union_all(&mut self, labels: &[Label]) -> Label {
        labels.iter().fold(CLEAN, |acc, l| self.union(acc, *l))
    }

    fn get(&self, id: Label) -> &TaintLabels {
        &self.sets[id as usize]
    }

    fn has_kind(&self, id: Label, kind: TaintKind) -> bool {
        self.sets[id as usize]
            .iter()
            .any(|s| matches!(s, DynSource::Block { kind: k, .. } if *k == kind))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccountState {
    pub balance: U256,
    pub nonce: u64,
    pub code: Arc<Vec<u8>>,
    /// Value and label per slot.
    storage: BTreeMap<U256, (U256, Label)>,
}

impl AccountState {
    pub fn storage(&self) -> impl Iterator<Item = (U256, U256)> + '_ {
        self.storage.iter().map(|(k, (v, _))| (*k, *v))
    }
}

/// Accounts touched by a replay, plus bookkeeping that reverts with them.
#[derive(Debug, Clone, Default)]
pub struct WorldState {
    pub accounts: BTreeMap<Address, AccountState>,
    /// Accounts created during the transaction; unset slots read as zero.
    created: BTreeSet<Address>,
    destructed: BTreeSet<Address>,
    transient: BTreeMap<(Address, U256), (U256, Label)>,
}

impl WorldState {
    pub fn from_fixture(fixture: &Fixture) -> Self {
        let accounts = fixture
            .accounts
            .iter()
            .map(|(addr, a)| {
                let storage = a.storage.iter().map(|(k, v)| (k.0, (v.0, CLEAN))).collect();
                (
                    *addr,
                    AccountState {
                        balance: a.balance.0,
                        nonce: a.nonce,
                        code: Arc::new(a.code.clone()),
                        storage,
                    },
                )
            })
            .collect();
        WorldState {
            accounts,
            ..WorldState::default()
        }
    }

    pub fn balance(&self, addr: &Address) -> Option<U256> {
        self.accounts.get(addr).map(|a| a.balance)
    }

    pub fn storage_value(&self, addr: &Address, key: U256) -> Option<U256> {
        self.accounts
            .get(addr)
            .and_then(|a| a.storage.get(&key))
            .map(|(v, _)| *v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Transaction,
    Call,
    Callcode,
    Delegatecall,
    Staticcall,
    Create,
    Create2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrameInfo {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub kind: FrameKind,
    pub caller: Address,
    /// Account whose storage and balance the frame acts on.
    pub address: Address,
    pub code_address: Address,
    pub reverted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    JumpI {
        frame: usize,
        pc: usize,
        address: Address,
        taken: bool,
        taint: TaintLabels,
    },
    Call {
        frame: usize,
        pc: usize,
        kind: FrameKind,
        from: Address,
        to: Address,
        #[serde(with = "hex_word")]
        value: U256,
        taint: TaintLabels,
    },
    BalanceQuery {
        frame: usize,
        pc: usize,
        address: Address,
        queried: Address,
    },
    Revert {
        frame: usize,
        pc: usize,
        address: Address,
    },
    Transfer {
        frame: usize,
        from: Address,
        to: Address,
        #[serde(with = "hex_word")]
        value: U256,
    },
    Create {
        frame: usize,
        creator: Address,
        created: Address,
    },
    SelfDestruct {
        frame: usize,
        address: Address,
        beneficiary: Address,
    },
    Unsupported {
        frame: usize,
        pc: usize,
        opcode: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Success,
    Reverted,
    Failed,
}

#[derive(Debug, Clone)]
pub struct ExecutionTrace {
    pub tx_id: String,
    pub frames: Vec<FrameInfo>,
    pub events: Vec<Event>,
    pub status: TxStatus,
    /// An unsupported instruction or precompile was hit.
    pub partial: bool,
    pub output: Vec<u8>,
    pub final_state: WorldState,
}

impl ExecutionTrace {
    /// The frame and all its ancestors completed without reverting.
    pub fn committed(&self, frame: usize) -> bool {
        let mut cur = Some(frame);
        while let Some(f) = cur {
            if self.frames[f].reverted {
                return false;
            }
            cur = self.frames[f].parent;
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("fixture incomplete: {0}")]
    FixtureIncomplete(String),
    #[error("step limit of {0} instructions exceeded")]
    StepLimit(u64),
    #[error("transaction invalid: {0}")]
    InvalidTransaction(String),
}

#[derive(Debug, Clone)]
pub struct ReplayConfig {
    /// Block-data kinds introduced as taint sources.
    pub vulnerable: BTreeSet<TaintKind>,
    pub max_steps: u64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            vulnerable: TaintKind::ALL.into_iter().collect(),
            max_steps: 10_000_000,
        }
    }
}

struct TxEnv<'a> {
    origin: Address,
    number: u64,
    timestamp: u64,
    coinbase: Address,
    difficulty: U256,
    gaslimit: u64,
    blockhashes: &'a BTreeMap<u64, crate::word::HexWord>,
}

struct Message {
    kind: FrameKind,
    caller: Address,
    address: Address,
    code_address: Address,
    value: U256,
    /// Value actually moved from caller to address on entry.
    transfer: bool,
    input: Vec<u8>,
    input_labels: Vec<Label>,
    code: Arc<Vec<u8>>,
    is_static: bool,
    depth: usize,
}

enum Halt {
    Stop,
    Return(Vec<u8>, Vec<Label>),
    Revert(Vec<u8>, Vec<Label>),
    /// Exceptional halt: consumes the frame and reverts it.
    Fault,
}

enum Stop {
    Halt(Halt),
    Error(ReplayError),
}

impl From<ReplayError> for Stop {
    fn from(e: ReplayError) -> Self {
        Stop::Error(e)
    }
}

fn fault<T>() -> Result<T, Stop> {
    Err(Stop::Halt(Halt::Fault))
}

struct FrameResult {
    success: bool,
    output: Vec<u8>,
    output_labels: Vec<Label>,
}

fn jumpdests(code: &[u8]) -> Vec<bool> {
    let mut valid = vec![false; code.len()];
    let mut pc = 0;
    while pc < code.len() {
        let op = Opcode::from_byte(code[pc]);
        if op == Opcode::Jumpdest {
            valid[pc] = true;
        }
        pc += 1 + op.immediate_len();
    }
    valid
}

fn as_usize(v: U256) -> Option<usize> {
    word::usize_of(v)
}

pub fn create_address(sender: Address, nonce: u64) -> Address {
    // RLP([sender, nonce])
    let mut nonce_rlp = Vec::new();
    if nonce == 0 {
        nonce_rlp.push(0x80);
    } else if nonce < 0x80 {
        nonce_rlp.push(nonce as u8);
    } else {
        let bytes = nonce.to_be_bytes();
        let trimmed: Vec<u8> = bytes.iter().copied().skip_while(|b| *b == 0).collect();
        nonce_rlp.push(0x80 + trimmed.len() as u8);
        nonce_rlp.extend(trimmed);
    }
    let mut payload = vec![0x94];
    payload.extend_from_slice(&sender.0);
    payload.extend(nonce_rlp);
    let mut rlp = vec![0xc0 + payload.len() as u8];
    rlp.extend(payload);
    let hash = keccak256(&rlp);
    let mut out = [0u8; 20];
    out.copy_from_slice(&hash[12..]);
    Address(out)
}

pub fn create2_address(sender: Address, salt: U256, init_code: &[u8]) -> Address {
    let mut buf = vec![0xff];
    buf.extend_from_slice(&sender.0);
    buf.extend_from_slice(&word_to_be_bytes(salt));
    buf.extend_from_slice(&keccak256(init_code));
    let hash = keccak256(&buf);
    let mut out = [0u8; 20];
    out.copy_from_slice(&hash[12..]);
    Address(out)
}

struct Interp<'a> {
    env: TxEnv<'a>,
    config: &'a ReplayConfig,
    world: WorldState,
    labels: Labels,
    frames: Vec<FrameInfo>,
    events: Vec<Event>,
    steps: u64,
    partial: bool,
}

/// Per-frame machine state.
struct Machine {
    stack: Vec<(U256, Label)>,
    memory: Vec<u8>,
    mem_labels: Vec<Label>,
    returndata: Vec<u8>,
    returndata_labels: Vec<Label>,
}

impl Machine {
    fn pop(&mut self) -> Result<(U256, Label), Stop> {
        match self.stack.pop() {
            Some(v) => Ok(v),
            None => fault(),
        }
    }

    fn push(&mut self, v: U256, l: Label) -> Result<(), Stop> {
        if self.stack.len() >= STACK_LIMIT {
            return fault();
        }
        self.stack.push((v, l));
        Ok(())
    }

    /// Grows memory to cover `[offset, offset + len)`; returns the range.
    fn expand(&mut self, offset: U256, len: U256) -> Result<(usize, usize), Stop> {
        if len.is_zero() {
            return Ok((0, 0));
        }
        let (Some(off), Some(len)) = (as_usize(offset), as_usize(len)) else {
            return fault();
        };
        let end = off.checked_add(len).filter(|e| *e <= MEMORY_LIMIT);
        let Some(end) = end else {
            return fault();
        };
        let words_end = end.div_ceil(32) * 32;
        if words_end > self.memory.len() {
            self.memory.resize(words_end, 0);
            self.mem_labels.resize(words_end, CLEAN);
        }
        Ok((off, len))
    }

    fn read(&mut self, offset: U256, len: U256) -> Result<(Vec<u8>, Vec<Label>), Stop> {
        let (off, len) = self.expand(offset, len)?;
        Ok((
            self.memory[off..off + len].to_vec(),
            self.mem_labels[off..off + len].to_vec(),
        ))
    }

    fn write(&mut self, offset: U256, data: &[u8], labels: &[Label]) -> Result<(), Stop> {
        let (off, len) = self.expand(offset, U256::from(data.len()))?;
        self.memory[off..off + len].copy_from_slice(data);
        self.mem_labels[off..off + len].copy_from_slice(labels);
        Ok(())
    }
}

/// Bytes `[offset, offset + len)` of `src`, zero-padded past its end.
fn slice_padded(src: &[u8], labels: &[Label], offset: U256, len: usize) -> (Vec<u8>, Vec<Label>) {
    let mut data = vec![0u8; len];
    let mut out_labels = vec![CLEAN; len];
    if let Some(off) = as_usize(offset) {
        if off < src.len() {
            let n = (src.len() - off).min(len);
            data[..n].copy_from_slice(&src[off..off + n]);
            if !labels.is_empty() {
                out_labels[..n].copy_from_slice(&labels[off..off + n]);
            }
        }
    }
    (data, out_labels)
}

impl<'a> Interp<'a> {
    fn account(&self, addr: &Address) -> Result<&AccountState, ReplayError> {
        self.world.accounts.get(addr).ok_or_else(|| {
            ReplayError::FixtureIncomplete(format!("account {addr} is not in the fixture"))
        })
    }

    fn account_mut(&mut self, addr: &Address) -> Result<&mut AccountState, ReplayError> {
        self.world.accounts.get_mut(addr).ok_or_else(|| {
            ReplayError::FixtureIncomplete(format!("account {addr} is not in the fixture"))
        })
    }

    fn ensure_account(&mut self, addr: Address) {
        self.world
            .accounts
            .entry(addr)
            .or_insert_with(|| AccountState {
                balance: U256::ZERO,
                nonce: 0,
                code: Arc::new(Vec::new()),
                storage: BTreeMap::new(),
            });
    }

    fn sload(&self, addr: &Address, key: U256) -> Result<(U256, Label), ReplayError> {
        let acct = self.account(addr)?;
        match acct.storage.get(&key) {
            Some(v) => Ok(*v),
            None if self.world.created.contains(addr) => Ok((U256::ZERO, CLEAN)),
            None => Err(ReplayError::FixtureIncomplete(format!(
                "storage slot {} of {addr} is not in the fixture",
                word::word_to_hex(key)
            ))),
        }
    }

    fn source(&mut self, kind: TaintKind, detail: U256) -> Label {
        if self.config.vulnerable.contains(&kind) {
            self.labels.single(DynSource::Block { kind, detail })
        } else {
            CLEAN
        }
    }

    fn move_value(
        &mut self,
        from: Address,
        to: Address,
        value: U256,
        frame: usize,
    ) -> Result<bool, ReplayError> {
        if value.is_zero() {
            return Ok(true);
        }
        let bal = self.account(&from)?.balance;
        if bal < value {
            return Ok(false);
        }
        self.account_mut(&from)?.balance = bal - value;
        self.ensure_account(to);
        let acct = self.account_mut(&to)?;
        acct.balance = acct.balance.wrapping_add(value);
        self.events.push(Event::Transfer {
            frame,
            from,
            to,
            value,
        });
        Ok(true)
    }

    fn run_frame(
        &mut self,
        msg: Message,
        parent: Option<usize>,
    ) -> Result<FrameResult, ReplayError> {
        let id = self.frames.len();
        self.frames.push(FrameInfo {
            id,
            parent,
            depth: msg.depth,
            kind: msg.kind,
            caller: msg.caller,
            address: msg.address,
            code_address: msg.code_address,
            reverted: false,
        });
        let checkpoint = self.world.clone();
        if msg.transfer && !self.move_value(msg.caller, msg.address, msg.value, id)? {
            self.frames[id].reverted = true;
            return Ok(FrameResult {
                success: false,
                output: Vec::new(),
                output_labels: Vec::new(),
            });
        }
        let halt = match self.execute(id, &msg) {
            Ok(h) => h,
            Err(Stop::Halt(h)) => h,
            Err(Stop::Error(e)) => return Err(e),
        };
        let (success, output, output_labels) = match halt {
            Halt::Stop => (true, Vec::new(), Vec::new()),
            Halt::Return(d, l) => (true, d, l),
            Halt::Revert(d, l) => (false, d, l),
            Halt::Fault => (false, Vec::new(), Vec::new()),
        };
        if !success {
            self.world = checkpoint;
            self.frames[id].reverted = true;
        }
        Ok(FrameResult {
            success,
            output,
            output_labels,
        })
    }

    fn execute(&mut self, frame: usize, msg: &Message) -> Result<Halt, Stop> {
        let code = msg.code.clone();
        let valid_jumps = jumpdests(&code);
        let mut m = Machine {
            stack: Vec::new(),
            memory: Vec::new(),
            mem_labels: Vec::new(),
            returndata: Vec::new(),
            returndata_labels: Vec::new(),
        };
        let mut pc = 0usize;
        loop {
            if pc >= code.len() {
                return Ok(Halt::Stop);
            }
            self.steps += 1;
            if self.steps > self.config.max_steps {
                return Err(ReplayError::StepLimit(self.config.max_steps).into());
            }
            let op = Opcode::from_byte(code[pc]);
            let mut next = pc + 1 + op.immediate_len();
            match op {
                Opcode::Push(n) => {
                    let n = n as usize;
                    let end = (pc + 1 + n).min(code.len());
                    let mut imm = code[pc + 1..end].to_vec();
                    imm.resize(n, 0);
                    m.push(word_from_be_slice(&imm), CLEAN)?;
                }
                Opcode::Dup(n) => {
                    let n = n as usize;
                    if m.stack.len() < n {
                        return fault();
                    }
                    let v = m.stack[m.stack.len() - n];
                    m.push(v.0, v.1)?;
                }
                Opcode::Swap(n) => {
                    let n = n as usize;
                    let len = m.stack.len();
                    if len <= n {
                        return fault();
                    }
                    m.stack.swap(len - 1, len - 1 - n);
                }
                Opcode::Pop => {
                    m.pop()?;
                }
                Opcode::Jumpdest => {}
                Opcode::Stop => return Ok(Halt::Stop),
                Opcode::Invalid(_) => return fault(),
                Opcode::Jump => {
                    let (dest, _) = m.pop()?;
                    match as_usize(dest) {
                        Some(d) if d < valid_jumps.len() && valid_jumps[d] => next = d,
                        _ => return fault(),
                    }
                }
                Opcode::Jumpi => {
                    let (dest, _) = m.pop()?;
                    let (cond, cond_label) = m.pop()?;
                    let taken = !cond.is_zero();
                    self.events.push(Event::JumpI {
                        frame,
                        pc,
                        address: msg.address,
                        taken,
                        taint: self.labels.get(cond_label).clone(),
                    });
                    if taken {
                        match as_usize(dest) {
                            Some(d) if d < valid_jumps.len() && valid_jumps[d] => next = d,
                            _ => return fault(),
                        }
                    }
                }
                Opcode::Pc => m.push(U256::from(pc), CLEAN)?,
                Opcode::Msize => m.push(U256::from(m.memory.len()), CLEAN)?,
                Opcode::Gas => m.push(U256::from(GAS_READING), CLEAN)?,
                Opcode::Add
                | Opcode::Sub
                | Opcode::Mul
                | Opcode::Div
                | Opcode::Sdiv
                | Opcode::Mod
                | Opcode::Smod
                | Opcode::Exp
                | Opcode::Signextend
                | Opcode::Lt
                | Opcode::Gt
                | Opcode::Slt
                | Opcode::Sgt
                | Opcode::Eq
                | Opcode::And
                | Opcode::Or
                | Opcode::Xor
                | Opcode::Byte
                | Opcode::Shl
                | Opcode::Shr
                | Opcode::Sar => {
                    let (a, la) = m.pop()?;
                    let (b, lb) = m.pop()?;
                    let v = crate::engine::fold(op, &[a, b]).expect("binary op folds");
                    let mut l = self.labels.union(la, lb);
                    if matches!(op, Opcode::Mod | Opcode::Smod)
                        && (self.labels.has_kind(la, TaintKind::Timestamp)
                            || self.labels.has_kind(lb, TaintKind::Timestamp))
                    {
                        let s = self.source(TaintKind::ModTime, U256::from(self.env.timestamp));
                        l = self.labels.union(l, s);
                    }
                    m.push(v, l)?;
                }
                Opcode::Addmod | Opcode::Mulmod => {
                    let (a, la) = m.pop()?;
                    let (b, lb) = m.pop()?;
                    let (c, lc) = m.pop()?;
                    let v = crate::engine::fold(op, &[a, b, c]).expect("ternary op folds");
                    let l = self.labels.union_all(&[la, lb, lc]);
                    m.push(v, l)?;
                }
                Opcode::Iszero | Opcode::Not => {
                    let (a, la) = m.pop()?;
                    let v = crate::engine::fold(op, &[a]).expect("unary op folds");
                    m.push(v, la)?;
                }
                Opcode::Sha3 => {
                    let (off, lo) = m.pop()?;
                    let (len, ll) = m.pop()?;
                    let (data, labels) = m.read(off, len)?;
                    let l = self.labels.union_all(&labels);
                    let l = self.labels.union_all(&[l, lo, ll]);
                    m.push(word_from_be_slice(&keccak256(&data)), l)?;
                }
                Opcode::Address => m.push(msg.address.to_word(), CLEAN)?,
                Opcode::Balance => {
                    let (a, la) = m.pop()?;
                    let addr = Address::from_word(a);
                    let bal = self.account(&addr)?.balance;
                    self.events.push(Event::BalanceQuery {
                        frame,
                        pc,
                        address: msg.address,
                        queried: addr,
                    });
                    let s = self.labels.single(DynSource::Balance { address: addr });
                    let l = self.labels.union(la, s);
                    m.push(bal, l)?;
                }
                Opcode::Selfbalance => {
                    let bal = self.account(&msg.address)?.balance;
                    self.events.push(Event::BalanceQuery {
                        frame,
                        pc,
                        address: msg.address,
                        queried: msg.address,
                    });
                    let l = self.labels.single(DynSource::Balance {
                        address: msg.address,
                    });
                    m.push(bal, l)?;
                }
                Opcode::Origin => m.push(self.env.origin.to_word(), CLEAN)?,
                Opcode::Caller => m.push(msg.caller.to_word(), CLEAN)?,
                Opcode::Callvalue => m.push(msg.value, CLEAN)?,
                Opcode::Calldataload => {
                    let (off, lo) = m.pop()?;
                    let (data, labels) = slice_padded(&msg.input, &msg.input_labels, off, 32);
                    let l = self.labels.union_all(&labels);
                    let l = self.labels.union(l, lo);
                    m.push(word_from_be_slice(&data), l)?;
                }
                Opcode::Calldatasize => m.push(U256::from(msg.input.len()), CLEAN)?,
                Opcode::Calldatacopy | Opcode::Codecopy | Opcode::Returndatacopy => {
                    let (dest, _) = m.pop()?;
                    let (off, _) = m.pop()?;
                    let (len, _) = m.pop()?;
                    let Some(n) = as_usize(len) else {
                        return fault();
                    };
                    let (data, labels) = match op {
                        Opcode::Calldatacopy => slice_padded(&msg.input, &msg.input_labels, off, n),
                        Opcode::Codecopy => slice_padded(&code, &[], off, n),
                        _ => {
                            let end = as_usize(off).and_then(|o| o.checked_add(n));
                            match end {
                                Some(e) if e <= m.returndata.len() => {
                                    let o = e - n;
                                    (
                                        m.returndata[o..e].to_vec(),
                                        m.returndata_labels[o..e].to_vec(),
                                    )
                                }
                                _ => return fault(),
                            }
                        }
                    };
                    m.write(dest, &data, &labels)?;
                }
                Opcode::Codesize => m.push(U256::from(code.len()), CLEAN)?,
                Opcode::Gasprice | Opcode::Basefee => m.push(U256::ZERO, CLEAN)?,
                Opcode::Extcodesize => {
                    let (a, _) = m.pop()?;
                    let len = self.account(&Address::from_word(a))?.code.len();
                    m.push(U256::from(len), CLEAN)?;
                }
                Opcode::Extcodehash => {
                    let (a, _) = m.pop()?;
                    let addr = Address::from_word(a);
                    let acct = self.account(&addr)?;
                    let empty = acct.code.is_empty() && acct.nonce == 0 && acct.balance.is_zero();
                    let h = if empty {
                        U256::ZERO
                    } else {
                        word_from_be_slice(&keccak256(&acct.code))
                    };
                    m.push(h, CLEAN)?;
                }
                Opcode::Extcodecopy => {
                    let (a, _) = m.pop()?;
                    let (dest, _) = m.pop()?;
                    let (off, _) = m.pop()?;
                    let (len, _) = m.pop()?;
                    let Some(n) = as_usize(len) else {
                        return fault();
                    };
                    let other = self.account(&Address::from_word(a))?.code.clone();
                    let (data, labels) = slice_padded(&other, &[], off, n);
                    m.write(dest, &data, &labels)?;
                }
                Opcode::Returndatasize => m.push(U256::from(m.returndata.len()), CLEAN)?,
                Opcode::Blockhash => {
                    let (n, ln) = m.pop()?;
                    let cur = U256::from(self.env.number);
                    let in_window = n < cur && cur - n <= U256::from(256);
                    let h = if in_window {
                        let n64 = n.to::<u64>();
                        self.env.blockhashes.get(&n64).map(|h| h.0).ok_or_else(|| {
                            ReplayError::FixtureIncomplete(format!("blockhash of block {n64}"))
                        })?
                    } else {
                        U256::ZERO
                    };
                    let s = self.source(TaintKind::Blockhash, n);
                    let l = self.labels.union(ln, s);
                    m.push(h, l)?;
                }
                Opcode::Coinbase => {
                    let v = self.env.coinbase.to_word();
                    let l = self.source(TaintKind::Coinbase, v);
                    m.push(v, l)?;
                }
                Opcode::Timestamp => {
                    let v = U256::from(self.env.timestamp);
                    let l = self.source(TaintKind::Timestamp, v);
                    m.push(v, l)?;
                }
                Opcode::Number => {
                    let v = U256::from(self.env.number);
                    let l = self.source(TaintKind::Number, v);
                    m.push(v, l)?;
                }
                Opcode::Difficulty => {
                    let v = self.env.difficulty;
                    let l = self.source(TaintKind::Difficulty, v);
                    m.push(v, l)?;
                }
                Opcode::Gaslimit => {
                    let v = U256::from(self.env.gaslimit);
                    let l = self.source(TaintKind::Gaslimit, v);
                    m.push(v, l)?;
                }
                Opcode::Chainid => m.push(U256::from(CHAIN_ID), CLEAN)?,
                Opcode::Mload => {
                    let (off, lo) = m.pop()?;
                    let (data, labels) = m.read(off, U256::from(32))?;
                    let l = self.labels.union_all(&labels);
                    let l = self.labels.union(l, lo);
                    m.push(word_from_be_slice(&data), l)?;
                }
                Opcode::Mstore => {
                    let (off, _) = m.pop()?;
                    let (v, lv) = m.pop()?;
                    m.write(off, &word_to_be_bytes(v), &[lv; 32])?;
                }
                Opcode::Mstore8 => {
                    let (off, _) = m.pop()?;
                    let (v, lv) = m.pop()?;
                    m.write(off, &[word_to_be_bytes(v)[31]], &[lv])?;
                }
                Opcode::Mcopy => {
                    let (dest, _) = m.pop()?;
                    let (src, _) = m.pop()?;
                    let (len, _) = m.pop()?;
                    m.expand(dest, len)?;
                    let (data, labels) = m.read(src, len)?;
                    m.write(dest, &data, &labels)?;
                }
                Opcode::Sload => {
                    let (k, _) = m.pop()?;
                    let (v, l) = self.sload(&msg.address, k)?;
                    m.push(v, l)?;
                }
                Opcode::Sstore => {
                    if msg.is_static {
                        return fault();
                    }
                    let (k, _) = m.pop()?;
                    let (v, lv) = m.pop()?;
                    self.account_mut(&msg.address)?.storage.insert(k, (v, lv));
                }
                Opcode::Tload => {
                    let (k, _) = m.pop()?;
                    let (v, l) = self
                        .world
                        .transient
                        .get(&(msg.address, k))
                        .copied()
                        .unwrap_or((U256::ZERO, CLEAN));
                    m.push(v, l)?;
                }
                Opcode::Tstore => {
                    if msg.is_static {
                        return fault();
                    }
                    let (k, _) = m.pop()?;
                    let (v, lv) = m.pop()?;
                    self.world.transient.insert((msg.address, k), (v, lv));
                }
                Opcode::Log(n) => {
                    if msg.is_static {
                        return fault();
                    }
                    let (off, _) = m.pop()?;
                    let (len, _) = m.pop()?;
                    for _ in 0..n {
                        m.pop()?;
                    }
                    m.expand(off, len)?;
                }
                Opcode::Return | Opcode::Revert => {
                    let (off, _) = m.pop()?;
                    let (len, _) = m.pop()?;
                    let (data, labels) = m.read(off, len)?;
                    if op == Opcode::Return {
                        return Ok(Halt::Return(data, labels));
                    }
                    self.events.push(Event::Revert {
                        frame,
                        pc,
                        address: msg.address,
                    });
                    return Ok(Halt::Revert(data, labels));
                }
                Opcode::Selfdestruct => {
                    if msg.is_static {
                        return fault();
                    }
                    let (b, _) = m.pop()?;
                    let beneficiary = Address::from_word(b);
                    self.ensure_account(beneficiary);
                    let bal = self.account(&msg.address)?.balance;
                    let created = self.world.created.contains(&msg.address);
                    if beneficiary != msg.address {
                        self.move_value(msg.address, beneficiary, bal, frame)?;
                    } else if created {
                        self.account_mut(&msg.address)?.balance = U256::ZERO;
                    }
                    if created {
                        self.world.destructed.insert(msg.address);
                    }
                    self.events.push(Event::SelfDestruct {
                        frame,
                        address: msg.address,
                        beneficiary,
                    });
                    return Ok(Halt::Stop);
                }
                Opcode::Call | Opcode::Callcode | Opcode::Delegatecall | Opcode::Staticcall => {
                    self.call(frame, msg, &mut m, op, pc)?;
                }
                Opcode::Create | Opcode::Create2 => {
                    self.create(frame, msg, &mut m, op)?;
                }
                Opcode::Blobhash | Opcode::Blobbasefee => {
                    self.partial = true;
                    self.events.push(Event::Unsupported {
                        frame,
                        pc,
                        opcode: op.name(),
                    });
                    return fault();
                }
            }
            pc = next;
        }
    }

    fn call(
        &mut self,
        frame: usize,
        msg: &Message,
        m: &mut Machine,
        op: Opcode,
        pc: usize,
    ) -> Result<(), Stop> {
        let (_gas, _) = m.pop()?;
        let (to_word, l_to) = m.pop()?;
        let (value, l_value) = if matches!(op, Opcode::Call | Opcode::Callcode) {
            m.pop()?
        } else {
            (U256::ZERO, CLEAN)
        };
        let (in_off, _) = m.pop()?;
        let (in_len, _) = m.pop()?;
        let (out_off, _) = m.pop()?;
        let (out_len, _) = m.pop()?;
        if op == Opcode::Call && msg.is_static && !value.is_zero() {
            return fault();
        }
        let (input, input_labels) = m.read(in_off, in_len)?;
        m.expand(out_off, out_len)?;
        let to = Address::from_word(to_word);
        let kind = match op {
            Opcode::Call => FrameKind::Call,
            Opcode::Callcode => FrameKind::Callcode,
            Opcode::Delegatecall => FrameKind::Delegatecall,
            _ => FrameKind::Staticcall,
        };
        let arg_label = self.labels.union_all(&input_labels);
        let arg_label = self.labels.union_all(&[arg_label, l_to, l_value]);
        self.events.push(Event::Call {
            frame,
            pc,
            kind,
            from: msg.address,
            to,
            value,
            taint: self.labels.get(arg_label).clone(),
        });

        m.returndata.clear();
        m.returndata_labels.clear();
        let is_precompile = to.to_word() >= U256::from(1) && to.to_word() <= U256::from(10);
        if is_precompile && !self.world.accounts.contains_key(&to) {
            self.partial = true;
            self.events.push(Event::Unsupported {
                frame,
                pc,
                opcode: format!("precompile {to}"),
            });
            return m.push(U256::ZERO, CLEAN);
        }
        let code = self.account(&to)?.code.clone();
        let sender_balance = self.account(&msg.address)?.balance;
        if msg.depth + 1 > CALL_DEPTH_LIMIT
            || (kind != FrameKind::Delegatecall && sender_balance < value)
        {
            return m.push(U256::ZERO, CLEAN);
        }
        let child = match kind {
            FrameKind::Call | FrameKind::Staticcall => Message {
                kind,
                caller: msg.address,
                address: to,
                code_address: to,
                value,
                transfer: kind == FrameKind::Call,
                input,
                input_labels,
                code,
                is_static: msg.is_static || kind == FrameKind::Staticcall,
                depth: msg.depth + 1,
            },
            FrameKind::Callcode => Message {
                kind,
                caller: msg.address,
                address: msg.address,
                code_address: to,
                value,
                transfer: false,
                input,
                input_labels,
                code,
                is_static: msg.is_static,
                depth: msg.depth + 1,
            },
            _ => Message {
                kind,
                caller: msg.caller,
                address: msg.address,
                code_address: to,
                value: msg.value,
                transfer: false,
                input,
                input_labels,
                code,
                is_static: msg.is_static,
                depth: msg.depth + 1,
            },
        };
        let result = self.run_frame(child, Some(frame))?;
        m.returndata = result.output;
        m.returndata_labels = result.output_labels;
        if let (Some(off), Some(len)) = (as_usize(out_off), as_usize(out_len)) {
            let n = len.min(m.returndata.len());
            if n > 0 {
                let data = m.returndata[..n].to_vec();
                let labels = m.returndata_labels[..n].to_vec();
                m.write(U256::from(off), &data, &labels)?;
            }
        }
        m.push(bool_word(result.success), CLEAN)
    }

    fn create(
        &mut self,
        frame: usize,
        msg: &Message,
        m: &mut Machine,
        op: Opcode,
    ) -> Result<(), Stop> {
        if msg.is_static {
            return fault();
        }
        let (value, lv) = m.pop()?;
        let (off, lo) = m.pop()?;
        let (len, ll) = m.pop()?;
        let (salt, ls) = if op == Opcode::Create2 {
            m.pop()?
        } else {
            (U256::ZERO, CLEAN)
        };
        let (init, init_labels) = m.read(off, len)?;
        m.returndata.clear();
        m.returndata_labels.clear();
        let creator = msg.address;
        let acct = self.account(&creator)?;
        if msg.depth + 1 > CALL_DEPTH_LIMIT || acct.balance < value || acct.nonce == u64::MAX {
            return m.push(U256::ZERO, CLEAN);
        }
        let nonce = acct.nonce;
        self.account_mut(&creator)?.nonce = nonce + 1;
        let addr = if op == Opcode::Create {
            create_address(creator, nonce)
        } else {
            create2_address(creator, salt, &init)
        };
        let label = self.labels.union_all(&init_labels);
        let label = self.labels.union_all(&[label, lv, lo, ll, ls]);
        if let Some(existing) = self.world.accounts.get(&addr) {
            if existing.nonce != 0 || !existing.code.is_empty() {
                return m.push(U256::ZERO, CLEAN);
            }
        }
        let checkpoint = self.world.clone();
        let prior_balance = self.world.balance(&addr).unwrap_or_default();
        self.world.accounts.insert(
            addr,
            AccountState {
                balance: prior_balance,
                nonce: 1,
                code: Arc::new(Vec::new()),
                storage: BTreeMap::new(),
            },
        );
        self.world.created.insert(addr);
        let child = Message {
            kind: if op == Opcode::Create {
                FrameKind::Create
            } else {
                FrameKind::Create2
            },
            caller: creator,
            address: addr,
            code_address: addr,
            value,
            transfer: true,
            input: Vec::new(),
            input_labels: Vec::new(),
            code: Arc::new(init),
            is_static: false,
            depth: msg.depth + 1,
        };
        let child_id = self.frames.len();
        let result = self.run_frame(child, Some(frame))?;
        let deployable = result.success
            && result.output.len() <= MAX_CODE_SIZE
            && result.output.first() != Some(&0xef);
        if !deployable {
            self.world = checkpoint;
            self.account_mut(&creator)?.nonce = nonce + 1;
            self.frames[child_id].reverted = true;
            if !result.success {
                m.returndata = result.output;
                m.returndata_labels = result.output_labels;
            }
            return m.push(U256::ZERO, CLEAN);
        }
        self.account_mut(&addr)?.code = Arc::new(result.output);
        self.events.push(Event::Create {
            frame,
            creator,
            created: addr,
        });
        m.push(addr.to_word(), label)
    }
}

/// Replays `tx` against the fixture's pre-state.
pub fn replay_transaction(
    fixture: &Fixture,
    tx: &TransactionRecord,
    config: &ReplayConfig,
) -> Result<ExecutionTrace, ReplayError> {
    let env = TxEnv {
        origin: tx.from,
        number: tx.block_number,
        timestamp: tx.timestamp.unwrap_or(fixture.block_env.timestamp),
        coinbase: fixture.block_env.coinbase,
        difficulty: fixture.block_env.difficulty.0,
        gaslimit: fixture.block_env.gaslimit,
        blockhashes: &fixture.block_env.blockhashes,
    };
    let mut it = Interp {
        env,
        config,
        world: WorldState::from_fixture(fixture),
        labels: Labels::new(),
        frames: Vec::new(),
        events: Vec::new(),
        steps: 0,
        partial: false,
    };
    let sender = it.account(&tx.from)?;
    if sender.balance < tx.value.0 {
        return Err(ReplayError::InvalidTransaction(format!(
            "sender {} cannot pay value {}",
            tx.from, tx.value
        )));
    }
    it.account_mut(&tx.from)?.nonce += 1;
    let code = it.account(&tx.to)?.code.clone();
    let msg = Message {
        kind: FrameKind::Transaction,
        caller: tx.from,
        address: tx.to,
        code_address: tx.to,
        value: tx.value.0,
        transfer: true,
        input_labels: vec![CLEAN; tx.input.len()],
        input: tx.input.clone(),
        code,
        is_static: false,
        depth: 0,
    };
    let result = it.run_frame(msg, None)?;
    let status = if result.success {
        TxStatus::Success
    } else if it
        .events
        .iter()
        .any(|e| matches!(e, Event::Revert { frame: 0, .. }))
    {
        TxStatus::Reverted
    } else {
        TxStatus::Failed
    };
    let mut world = it.world;
    for addr in std::mem::take(&mut world.destructed) {
        world.accounts.remove(&addr);
    }
    world.transient.clear();
    Ok(ExecutionTrace {
        tx_id: tx.id.clone(),
        frames: it.frames,
        events: it.events,
        status,
        partial: it.partial,
        output: result.output,
        final_state: world,
    })
}
