//! Memory alias analysis by segmentation.
//!
//! Solidity allocates memory by bumping the free memory pointer (FMP) kept
//! at `0x40`. Every write to `0x40` mints a new segment id; addresses built
//! as `MLOAD(0x40) + Δ` are attributed to the segment that was current when
//! that pointer was loaded. A load from a segment reads every live write of
//! the segment. Concrete addresses are kept in per-word pseudo-segments, so
//! code that only uses constant addresses is tracked at word precision.
//! Everything else lands in a wildcard segment.

use std::collections::BTreeMap;

use crate::decoder::Opcode;
use crate::engine::{InstanceFactory, InstanceId, Producer, Value};
use crate::word::{usize_of, U256};

pub type SegId = u64;

/// Memory cell holding the free memory pointer.
pub const FMP_SLOT: u64 = 0x40;

/// Copies longer than this many words are recorded in the wildcard segment.
const MAX_TRACKED_WORDS: u64 = 1024;

#[derive(Debug, Clone)]
pub enum AddressForm {
    Fmp { seg: SegId, delta: U256 },
    Absolute(U256),
    Opaque(Value),
}

/// One recorded write. `offset` is the Δ inside an FMP segment or the
/// absolute byte address; `len` is `None` when the length is symbolic.
#[derive(Debug, Clone)]
pub struct MemWrite {
    pub offset: U256,
    pub len: Option<u64>,
    pub value: Value,
    seq: u64,
}

impl MemWrite {
    fn end(&self) -> Option<U256> {
        self.len.map(|l| self.offset.saturating_add(U256::from(l)))
    }

    fn overlaps(&self, start: U256, end: U256) -> bool {
        match self.end() {
            Some(e) => self.offset < end && start < e,
            None => self.offset < end,
        }
    }

    /// `later` fully covers this write.
    fn covered_by(&self, later: &MemWrite) -> bool {
        match (self.end(), later.end()) {
            (Some(e), Some(le)) => later.offset <= self.offset && le >= e,
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MemorySegment {
    pub seg_id: SegId,
    pub writes: Vec<MemWrite>,
}

impl MemorySegment {
    fn new(seg_id: SegId) -> Self {
        MemorySegment {
            seg_id,
            writes: Vec::new(),
        }
    }

    /// Writes not shadowed by a later write at an equal Δ with an equal or
    /// larger width.
    fn live(&self) -> Vec<&MemWrite> {
        self.writes
            .iter()
            .enumerate()
            .filter(|(i, w)| {
                !self.writes[i + 1..]
                    .iter()
                    .any(|l| l.offset == w.offset && w.covered_by(l))
            })
            .map(|(_, w)| w)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum MemoryNote {
    /// Load from a location nothing was written to.
    UnwrittenRead,
    /// Load spanned two pseudo-segments that both hold writes.
    StraddlingRead,
}

#[derive(Debug, Clone)]
pub struct MemoryModel {
    next_seg: SegId,
    current_seg: SegId,
    segments: BTreeMap<SegId, MemorySegment>,
    /// Concrete-address writes, indexed by 32-byte word number.
    words: BTreeMap<U256, Vec<MemWrite>>,
    wildcard: Vec<MemWrite>,
    fmp_loads: BTreeMap<InstanceId, SegId>,
    next_seq: u64,
}

impl Default for MemoryModel {
    fn default() -> Self {
        let mut segments = BTreeMap::new();
        segments.insert(0, MemorySegment::new(0));
        MemoryModel {
            next_seg: 1,
            current_seg: 0,
            segments,
            words: BTreeMap::new(),
            wildcard: Vec::new(),
            fmp_loads: BTreeMap::new(),
            next_seq: 0,
        }
    }
}

fn word_span(start: U256, len: u64) -> Option<(U256, U256)> {
    if len == 0 {
        return None;
    }
    let first = start >> 5;
    let last = start.saturating_add(U256::from(len - 1)) >> 5;
    Some((first, last))
}

impl MemoryModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current_segment(&self) -> SegId {
        self.current_seg
    }

    pub fn segment(&self, seg: SegId) -> Option<&MemorySegment> {
        self.segments.get(&seg)
    }

    pub fn segment_ids(&self) -> impl Iterator<Item = SegId> + '_ {
        self.segments.keys().copied()
    }

    /// Taint sources of everything stored in memory.
    pub fn taint_summary(&self) -> crate::taint::TaintSet {
        let mut out = crate::taint::TaintSet::new();
        let all = self
            .segments
            .values()
            .flat_map(|s| s.writes.iter())
            .chain(self.words.values().flatten())
            .chain(&self.wildcard);
        for w in all {
            out.extend_from(&w.value.taints);
        }
        out
    }

    /// Remembers that `instance` is a load of the FMP cell, taken while the
    /// current segment was live.
    pub fn register_fmp_load(&mut self, instance: &Value) {
        self.fmp_loads.insert(instance.id, self.current_seg);
    }

    pub fn classify_address(&self, addr: &Value) -> AddressForm {
        if let Some(c) = addr.concrete {
            return AddressForm::Absolute(c);
        }
        let mut delta = U256::ZERO;
        let mut base: Option<SegId> = None;
        let mut work = vec![addr];
        while let Some(v) = work.pop() {
            if let Some(c) = v.concrete {
                delta = delta.wrapping_add(c);
            } else if v.producer == Producer::Op(Opcode::Add) {
                work.extend(v.operands.iter());
            } else if let (Some(seg), None) = (self.fmp_loads.get(&v.id), base) {
                base = Some(*seg);
            } else {
                return AddressForm::Opaque(addr.clone());
            }
        }
        match base {
            Some(seg) => AddressForm::Fmp { seg, delta },
            None => AddressForm::Opaque(addr.clone()),
        }
    }

    fn push_write(&mut self, offset: U256, len: Option<u64>, value: Value) -> MemWrite {
        let w = MemWrite {
            offset,
            len,
            value,
            seq: self.next_seq,
        };
        self.next_seq += 1;
        w
    }

    fn record(&mut self, form: AddressForm, len: Option<u64>, value: Value) {
        match form {
            AddressForm::Absolute(addr) => {
                if let Some(span) = len.filter(|l| *l <= MAX_TRACKED_WORDS * 32) {
                    let w = self.push_write(addr, Some(span), value);
                    if let Some((first, last)) = word_span(addr, span) {
                        let mut word = first;
                        loop {
                            self.words.entry(word).or_default().push(w.clone());
                            if word == last {
                                break;
                            }
                            word += U256::from(1);
                        }
                    }
                } else {
                    let w = self.push_write(addr, None, value);
                    self.words.entry(addr >> 5).or_default().push(w.clone());
                    self.wildcard.push(w);
                }
            }
            AddressForm::Fmp { seg, delta } => {
                let w = self.push_write(delta, len, value);
                self.segments
                    .entry(seg)
                    .or_insert_with(|| MemorySegment::new(seg))
                    .writes
                    .push(w);
            }
            AddressForm::Opaque(_) => {
                let w = self.push_write(U256::ZERO, None, value);
                self.wildcard.push(w);
            }
        }
    }

    /// `MSTORE`/`MSTORE8`. `width` is in bytes (32 or 1).
    pub fn on_mstore(&mut self, addr: &Value, value: Value, width: u64) {
        let form = self.classify_address(addr);
        if let AddressForm::Absolute(a) = form {
            if a == U256::from(FMP_SLOT) && width == 32 {
                let seg = self.next_seg;
                self.next_seg += 1;
                self.current_seg = seg;
                self.segments.insert(seg, MemorySegment::new(seg));
            }
        }
        self.record(form, Some(width), value);
    }

    /// Writes of a copy instruction (`CALLDATACOPY`, `MCOPY`, call output, ...).
    pub fn on_copy(&mut self, dest: &Value, len: &Value, value: Value) {
        let form = self.classify_address(dest);
        let len = len.concrete.and_then(|l| u64::try_from(l).ok());
        if len == Some(0) {
            return;
        }
        self.record(form, len, value);
    }

    fn live_words(&self, start: U256, len: u64) -> (Vec<MemWrite>, bool) {
        let Some((first, last)) = word_span(start, len) else {
            return (Vec::new(), false);
        };
        let end = start.saturating_add(U256::from(len));
        let mut candidates: BTreeMap<u64, MemWrite> = BTreeMap::new();
        let mut words_with_writes = 0;
        for (_, writes) in self.words.range(first..=last) {
            let mut hit = false;
            for w in writes {
                if w.overlaps(start, end) {
                    hit = true;
                    candidates.insert(w.seq, w.clone());
                }
            }
            if hit {
                words_with_writes += 1;
            }
        }
        // A write covered by a later one is invisible.
        let all: Vec<&MemWrite> = candidates.values().collect();
        let live = all
            .iter()
            .filter(|w| !all.iter().any(|l| l.seq > w.seq && w.covered_by(l)))
            .map(|w| (*w).clone())
            .collect();
        (live, words_with_writes > 1)
    }

    fn resolve_reads(&self, form: &AddressForm, len: Option<u64>) -> (Vec<MemWrite>, bool) {
        match form {
            AddressForm::Absolute(a) => match len {
                Some(l) if l <= MAX_TRACKED_WORDS * 32 => self.live_words(*a, l),
                _ => {
                    let writes = self
                        .words
                        .range((*a >> 5)..)
                        .flat_map(|(_, ws)| ws.iter().map(|w| (w.seq, w.clone())))
                        .collect::<BTreeMap<u64, MemWrite>>()
                        .into_values()
                        .collect();
                    (writes, false)
                }
            },
            AddressForm::Fmp { seg, .. } => {
                let writes = self
                    .segments
                    .get(seg)
                    .map(|s| s.live().into_iter().cloned().collect())
                    .unwrap_or_default();
                (writes, false)
            }
            AddressForm::Opaque(_) => {
                let mut writes: Vec<MemWrite> = self.wildcard.clone();
                if let Some(s) = self.segments.get(&self.current_seg) {
                    writes.extend(s.live().into_iter().cloned());
                }
                (writes, false)
            }
        }
    }

    fn ordered(mut writes: Vec<MemWrite>) -> Vec<Value> {
        writes.sort_by(|a, b| a.offset.cmp(&b.offset).then(a.seq.cmp(&b.seq)));
        writes.into_iter().map(|w| w.value).collect()
    }

    /// Memory operands of `MLOAD(addr)`. Unwritten locations yield a single
    /// untainted unknown instance.
    pub fn on_mload(
        &self,
        addr: &Value,
        factory: &mut InstanceFactory,
        pc: usize,
    ) -> (Vec<Value>, Vec<MemoryNote>) {
        let form = self.classify_address(addr);
        let (writes, straddles) = self.resolve_reads(&form, Some(32));
        let mut notes = Vec::new();
        if straddles {
            notes.push(MemoryNote::StraddlingRead);
        }
        if writes.is_empty() {
            notes.push(MemoryNote::UnwrittenRead);
            return (vec![factory.unknown(pc)], notes);
        }
        (Self::ordered(writes), notes)
    }

    /// Values covering `[offset, offset + len)`, ordered by position. Used
    /// for `SHA3`, `MCOPY` sources and call arguments. Empty if nothing
    /// was written there.
    pub fn read_region(&self, offset: &Value, len: &Value) -> Vec<Value> {
        let form = self.classify_address(offset);
        let len = len.concrete.map(|l| usize_of(l).map(|x| x as u64));
        let len = match len {
            Some(Some(0)) => return Vec::new(),
            Some(Some(l)) => Some(l),
            _ => None,
        };
        let (writes, _) = self.resolve_reads(&form, len);
        Self::ordered(writes)
    }
}
