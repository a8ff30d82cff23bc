//! Storage dependency analysis over flattened key polynomials.
//!
//! A key is flattened into a constant plus a multiset of opaque terms (one
//! per non-`ADD` subtree, identified by its structural [`Shape`]). `SLOAD`
//! scans the store log newest-first and takes the first entry whose key
//! compares `Equal`; entries that compare `Unknown` on the way contribute
//! their values as extra operands.

use std::collections::BTreeSet;
use std::fmt;

use crate::decoder::Opcode;
use crate::engine::{InstanceFactory, Producer, Shape, Value};
use crate::taint::TaintKind;
use crate::word::{word_to_hex, U256};

#[derive(Debug, Clone)]
pub struct OpaqueTerm {
    pub shape: Shape,
    pub producer: Producer,
    pub volatile: bool,
    pub rendered: String,
}

impl PartialEq for OpaqueTerm {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
    }
}

impl Eq for OpaqueTerm {}

impl PartialOrd for OpaqueTerm {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpaqueTerm {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.shape.cmp(&other.shape)
    }
}

/// A storage key as `constant + Σ opaque terms`; terms are kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct KeyPolynomial {
    constant: U256,
    terms: Vec<OpaqueTerm>,
}

impl KeyPolynomial {
    pub fn constant(&self) -> U256 {
        self.constant
    }

    pub fn opaque_terms(&self) -> &[OpaqueTerm] {
        &self.terms
    }

    pub fn is_concrete(&self) -> bool {
        self.terms.is_empty()
    }

    fn is_volatile(&self) -> bool {
        self.terms.iter().any(|t| t.volatile)
    }
}

impl fmt::Display for KeyPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = self.terms.iter().map(|t| t.rendered.clone()).collect();
        if !self.constant.is_zero() || parts.is_empty() {
            parts.push(word_to_hex(self.constant));
        }
        f.write_str(&parts.join(" + "))
    }
}

pub fn flatten_key(key: &Value) -> KeyPolynomial {
    let mut constant = U256::ZERO;
    let mut terms = Vec::new();
    let mut work = vec![key];
    while let Some(v) = work.pop() {
        if let Some(c) = v.concrete {
            constant = constant.wrapping_add(c);
        } else if v.producer == Producer::Op(Opcode::Add) {
            work.extend(v.operands.iter());
        } else {
            terms.push(OpaqueTerm {
                shape: v.shape(),
                producer: v.producer,
                volatile: v.is_volatile(),
                rendered: v.render(2),
            });
        }
    }
    terms.sort();
    KeyPolynomial { constant, terms }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyRelation {
    Equal,
    Different,
    Unknown,
}

/// Structural comparison of two keys. Hashes are treated as injective over
/// their operand trees, so keys whose opaque parts are made only of `SHA3`
/// terms and do not match one-to-one are `Different`.
pub fn keys_equal(a: &KeyPolynomial, b: &KeyPolynomial) -> KeyRelation {
    if a.is_volatile() || b.is_volatile() {
        return KeyRelation::Unknown;
    }
    if a.terms == b.terms {
        return if a.constant == b.constant {
            KeyRelation::Equal
        } else {
            KeyRelation::Different
        };
    }
    let only_hashes = |p: &KeyPolynomial| {
        p.terms
            .iter()
            .all(|t| t.producer == Producer::Op(Opcode::Sha3))
    };
    if only_hashes(a) && only_hashes(b) {
        KeyRelation::Different
    } else {
        KeyRelation::Unknown
    }
}

#[derive(Debug, Clone)]
pub struct StorageEntry {
    pub key: KeyPolynomial,
    pub value: Value,
    pub write_pc: usize,
    pub run_index: u32,
}

/// Identity of a retained entry independent of which run produced it.
pub type EntrySignature = (KeyPolynomial, usize, BTreeSet<(TaintKind, usize)>);

impl StorageEntry {
    pub fn signature(&self) -> EntrySignature {
        (self.key.clone(), self.write_pc, self.value.taints.sites())
    }
}

/// Append-only store log for one path.
#[derive(Debug, Clone, Default)]
pub struct StorageModel {
    entries: Vec<StorageEntry>,
    /// Leading entries carried over from earlier runs. They stand for
    /// alternative histories, so an `Equal` one does not hide the others.
    seed_len: usize,
}

impl StorageModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts a run from entries retained by earlier runs.
    pub fn seeded(seed: &[StorageEntry]) -> Self {
        StorageModel {
            entries: seed.to_vec(),
            seed_len: seed.len(),
        }
    }

    pub fn entries(&self) -> &[StorageEntry] {
        &self.entries
    }

    pub fn on_sstore(&mut self, key: &Value, value: Value, write_pc: usize, run_index: u32) {
        self.entries.push(StorageEntry {
            key: flatten_key(key),
            value,
            write_pc,
            run_index,
        });
    }

    /// Storage operands of `SLOAD(key)`: the newest `Equal` entry plus
    /// any newer `Unknown`-matching entries, or every `Unknown` match when
    /// there is no `Equal` one. Seeded entries never shadow each other.
    /// With no match at all, a single untainted unknown instance.
    pub fn on_sload(&self, key: &Value, factory: &mut InstanceFactory, pc: usize) -> Vec<Value> {
        let wanted = flatten_key(key);
        let mut operands = Vec::new();
        for (idx, entry) in self.entries.iter().enumerate().rev() {
            match keys_equal(&entry.key, &wanted) {
                KeyRelation::Equal => {
                    operands.push(entry.value.clone());
                    if idx >= self.seed_len {
                        break;
                    }
                }
                KeyRelation::Unknown => operands.push(entry.value.clone()),
                KeyRelation::Different => {}
            }
        }
        if operands.is_empty() {
            operands.push(factory.unknown(pc));
        }
        operands
    }

    pub fn taint_summary(&self) -> crate::taint::TaintSet {
        let mut out = crate::taint::TaintSet::new();
        for e in &self.entries {
            out.extend_from(&e.value.taints);
        }
        out
    }

    /// Entries whose values carry taint; the seed for the next run.
    pub fn retain_tainted(&self) -> Vec<StorageEntry> {
        self.entries
            .iter()
            .filter(|e| e.value.is_tainted())
            .cloned()
            .collect()
    }
}
