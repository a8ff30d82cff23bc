//! Runtime bytecode decoding and basic-block splitting.

mod opcode;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub use opcode::Opcode;

use crate::word::{word_from_be_slice, U256};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("invalid hex character {found:?} at offset {offset}")]
    InvalidHexChar { offset: usize, found: char },
    #[error("odd number of hex digits ({digits})")]
    OddLength { digits: usize },
    #[error(
        "input looks like creation bytecode (CODECOPY/RETURN constructor at pc {pc:#x}); \
         extract the deployed runtime code and scan that instead"
    )]
    CreationCode { pc: usize },
}

/// Contract bytecode as raw bytes.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct RawBytecode {
    pub bytes: Vec<u8>,
}

impl fmt::Debug for RawBytecode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RawBytecode({})", self.to_hex())
    }
}

impl RawBytecode {
    pub fn new(bytes: Vec<u8>) -> Self {
        RawBytecode { bytes }
    }

    /// Parses hex text with an optional `0x` prefix and trailing whitespace.
    /// Offsets in errors refer to character positions in `text`.
    pub fn from_hex(text: &str) -> Result<Self, DecodeError> {
        let body = text.trim_end();
        let (skip, digits) = match body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
            Some(rest) => (2, rest),
            None => (0, body),
        };
        if let Some((i, c)) = digits.char_indices().find(|(_, c)| !c.is_ascii_hexdigit()) {
            return Err(DecodeError::InvalidHexChar {
                offset: skip + i,
                found: c,
            });
        }
        if digits.len() % 2 != 0 {
            return Err(DecodeError::OddLength {
                digits: digits.len(),
            });
        }
        let bytes = hex::decode(digits).expect("validated hex digits");
        Ok(RawBytecode { bytes })
    }

    /// Reads file contents that are either hex text or raw binary. Any byte
    /// that cannot appear in hex text selects the binary interpretation.
    pub fn from_file_contents(contents: &[u8]) -> Result<Self, DecodeError> {
        let texty = contents
            .iter()
            .all(|b| b.is_ascii_hexdigit() || b.is_ascii_whitespace() || *b == b'x' || *b == b'X');
        if texty && !contents.is_empty() {
            let text = std::str::from_utf8(contents).expect("ascii");
            Self::from_hex(text.trim_start())
        } else {
            Ok(RawBytecode::new(contents.to_vec()))
        }
    }

    pub fn to_hex(&self) -> String {
        format!("0x{}", hex::encode(&self.bytes))
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub pc: usize,
    pub opcode: Opcode,
    /// Inline bytes for PUSH1..PUSH32.
    pub immediate: Option<Vec<u8>>,
    /// The PUSH immediate ran past the end of the code.
    pub truncated: bool,
}

impl Instruction {
    pub fn encoded_len(&self) -> usize {
        1 + self.immediate.as_ref().map_or(0, Vec::len)
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.opcode.byte());
        if let Some(imm) = &self.immediate {
            out.extend_from_slice(imm);
        }
    }

    /// Value pushed by a PUSH instruction. Missing trailing bytes of a
    /// truncated immediate read as zero, as code past the end does.
    pub fn push_value(&self) -> Option<U256> {
        let Opcode::Push(width) = self.opcode else {
            return None;
        };
        let imm = self.immediate.as_deref().unwrap_or(&[]);
        let mut padded = imm.to_vec();
        padded.resize(width as usize, 0);
        Some(word_from_be_slice(&padded))
    }

    pub fn next_pc(&self) -> usize {
        self.pc + self.encoded_len()
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#06x} {}", self.pc, self.opcode)?;
        if let Some(imm) = &self.immediate {
            write!(f, " 0x{}", hex::encode(imm))?;
        }
        Ok(())
    }
}

pub fn decode_bytecode(raw: &RawBytecode) -> Vec<Instruction> {
    let code = &raw.bytes;
    let mut out = Vec::new();
    let mut pc = 0;
    while pc < code.len() {
        let opcode = Opcode::from_byte(code[pc]);
        let width = opcode.immediate_len();
        let (immediate, truncated) = if width > 0 {
            let end = (pc + 1 + width).min(code.len());
            (Some(code[pc + 1..end].to_vec()), end - (pc + 1) < width)
        } else {
            (None, false)
        };
        let inst = Instruction {
            pc,
            opcode,
            immediate,
            truncated,
        };
        pc = inst.next_pc();
        out.push(inst);
    }
    out
}

pub fn encode_instructions(instrs: &[Instruction]) -> Vec<u8> {
    let mut out = Vec::new();
    for inst in instrs {
        inst.encode_into(&mut out);
    }
    out
}

/// Rejects creation code by its constructor epilogue `CODECOPY; PUSH 0; RETURN`.
pub fn ensure_runtime(instrs: &[Instruction]) -> Result<(), DecodeError> {
    for w in instrs.windows(3) {
        if w[0].opcode == Opcode::Codecopy
            && w[1].push_value() == Some(U256::ZERO)
            && w[2].opcode == Opcode::Return
        {
            return Err(DecodeError::CreationCode { pc: w[0].pc });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminator {
    Jump,
    JumpI,
    Terminal(Opcode),
    /// Control continues into the next block (or falls off the end of code).
    FallThrough,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    /// Entry pc.
    pub id: usize,
    pub instructions: Vec<Instruction>,
    pub terminator: Terminator,
}

impl BasicBlock {
    /// Pc just past the last instruction.
    pub fn end_pc(&self) -> usize {
        self.instructions
            .last()
            .map_or(self.id, Instruction::next_pc)
    }

    pub fn last(&self) -> &Instruction {
        self.instructions.last().expect("blocks are never empty")
    }
}

pub fn split_basic_blocks(instrs: &[Instruction]) -> BTreeMap<usize, BasicBlock> {
    fn close(
        blocks: &mut BTreeMap<usize, BasicBlock>,
        current: &mut Vec<Instruction>,
        terminator: Terminator,
    ) {
        if current.is_empty() {
            return;
        }
        let instructions = std::mem::take(current);
        let id = instructions[0].pc;
        blocks.insert(
            id,
            BasicBlock {
                id,
                instructions,
                terminator,
            },
        );
    }

    let mut blocks = BTreeMap::new();
    let mut current: Vec<Instruction> = Vec::new();
    for inst in instrs {
        if inst.opcode == Opcode::Jumpdest {
            close(&mut blocks, &mut current, Terminator::FallThrough);
        }
        current.push(inst.clone());
        let terminator = match inst.opcode {
            Opcode::Jump => Some(Terminator::Jump),
            Opcode::Jumpi => Some(Terminator::JumpI),
            op if op.is_terminal() => Some(Terminator::Terminal(op)),
            _ => None,
        };
        if let Some(t) = terminator {
            close(&mut blocks, &mut current, t);
        }
    }
    close(&mut blocks, &mut current, Terminator::FallThrough);
    blocks
}

/// Decoded runtime code ready for simulated execution.
#[derive(Debug, Clone)]
pub struct Program {
    pub bytecode: RawBytecode,
    pub instructions: Vec<Instruction>,
    pub blocks: BTreeMap<usize, BasicBlock>,
    pub jumpdests: BTreeSet<usize>,
}

impl Program {
    /// Decodes and splits runtime code, rejecting creation code.
    pub fn from_runtime(bytecode: RawBytecode) -> Result<Self, DecodeError> {
        let instructions = decode_bytecode(&bytecode);
        ensure_runtime(&instructions)?;
        Ok(Self::from_parts(bytecode, instructions))
    }

    /// Decodes and splits without the creation-code check.
    pub fn from_bytecode_unchecked(bytecode: RawBytecode) -> Self {
        let instructions = decode_bytecode(&bytecode);
        Self::from_parts(bytecode, instructions)
    }

    fn from_parts(bytecode: RawBytecode, instructions: Vec<Instruction>) -> Self {
        let blocks = split_basic_blocks(&instructions);
        let jumpdests = instructions
            .iter()
            .filter(|i| i.opcode == Opcode::Jumpdest)
            .map(|i| i.pc)
            .collect();
        Program {
            bytecode,
            instructions,
            blocks,
            jumpdests,
        }
    }

    pub fn is_jumpdest(&self, pc: usize) -> bool {
        self.jumpdests.contains(&pc)
    }

    pub fn instruction_at(&self, pc: usize) -> Option<&Instruction> {
        self.instructions
            .binary_search_by_key(&pc, |i| i.pc)
            .ok()
            .map(|idx| &self.instructions[idx])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ops(instrs: &[Instruction]) -> Vec<Opcode> {
        instrs.iter().map(|i| i.opcode).collect()
    }

    #[test]
    fn single_timestamp() {
        let instrs = decode_bytecode(&RawBytecode::from_hex("0x42").unwrap());
        assert_eq!(instrs.len(), 1);
        assert_eq!(instrs[0].pc, 0);
        assert_eq!(instrs[0].opcode, Opcode::Timestamp);
        assert_eq!(instrs[0].immediate, None);
    }

    #[test]
    fn push_immediates_are_verbatim() {
        let instrs = decode_bytecode(&RawBytecode::from_hex("0x6001600101").unwrap());
        assert_eq!(
            ops(&instrs),
            vec![Opcode::Push(1), Opcode::Push(1), Opcode::Add]
        );
        assert_eq!(instrs[0].immediate.as_deref(), Some(&[0x01][..]));
        assert_eq!(instrs[1].pc, 2);
        assert_eq!(instrs[2].pc, 4);
        assert_eq!(instrs[1].push_value(), Some(U256::from(1)));
    }

    #[test]
    fn truncated_push_keeps_available_bytes() {
        let raw = RawBytecode::from_hex("61ab").unwrap();
        let instrs = decode_bytecode(&raw);
        assert_eq!(instrs.len(), 1);
        assert!(instrs[0].truncated);
        assert_eq!(instrs[0].immediate.as_deref(), Some(&[0xab][..]));
        assert_eq!(instrs[0].push_value(), Some(U256::from(0xab00)));
        assert_eq!(encode_instructions(&instrs), raw.bytes);
    }

    #[test]
    fn malformed_hex_names_offset() {
        assert_eq!(
            RawBytecode::from_hex("0x60zz"),
            Err(DecodeError::InvalidHexChar {
                offset: 4,
                found: 'z'
            })
        );
        assert_eq!(
            RawBytecode::from_hex("600"),
            Err(DecodeError::OddLength { digits: 3 })
        );
        assert!(RawBytecode::from_hex("0x6001\n").is_ok());
    }

    #[test]
    fn file_sniffing() {
        let text = RawBytecode::from_file_contents(b"0x6001\n").unwrap();
        assert_eq!(text.bytes, vec![0x60, 0x01]);
        let binary = RawBytecode::from_file_contents(&[0x60, 0x01]).unwrap();
        assert_eq!(binary.bytes, vec![0x60, 0x01]);
        assert_eq!(text.to_hex(), "0x6001");
    }

    #[test]
    fn unassigned_byte_is_invalid_and_terminal() {
        let instrs = decode_bytecode(&RawBytecode::new(vec![0x0c, 0x00]));
        assert_eq!(instrs[0].opcode, Opcode::Invalid(0x0c));
        let blocks = split_basic_blocks(&instrs);
        assert_eq!(blocks.len(), 2);
        assert_eq!(
            blocks[&0].terminator,
            Terminator::Terminal(Opcode::Invalid(0x0c))
        );
    }

    #[test]
    fn jump_then_jumpdest_gives_two_blocks() {
        // PUSH1 0x03; JUMP; JUMPDEST; STOP
        let instrs = decode_bytecode(&RawBytecode::from_hex("6003565b00").unwrap());
        let blocks = split_basic_blocks(&instrs);
        let ids: Vec<usize> = blocks.keys().copied().collect();
        assert_eq!(ids, vec![0, 3]);
        assert_eq!(blocks[&0].terminator, Terminator::Jump);
        assert_eq!(blocks[&0].instructions.len(), 2);
        assert_eq!(blocks[&3].terminator, Terminator::Terminal(Opcode::Stop));
        assert_eq!(blocks[&3].instructions.len(), 2);
    }

    #[test]
    fn straight_line_is_one_terminal_block() {
        let instrs = decode_bytecode(&RawBytecode::from_hex("600160010100").unwrap());
        let blocks = split_basic_blocks(&instrs);
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[&0].terminator, Terminator::Terminal(Opcode::Stop));
    }

    #[test]
    fn empty_input() {
        assert!(split_basic_blocks(&[]).is_empty());
        assert!(decode_bytecode(&RawBytecode::default()).is_empty());
    }

    #[test]
    fn creation_code_is_rejected() {
        // PUSH1 0x0a; DUP1; PUSH1 0x0b; PUSH1 0x00; CODECOPY; PUSH1 0x00; RETURN; INVALID
        let raw = RawBytecode::from_hex("600a80600b6000396000f3fe").unwrap();
        assert!(matches!(
            Program::from_runtime(raw),
            Err(DecodeError::CreationCode { pc: 7 })
        ));
    }
}
