//! Decoder checks against revm's opcode table and jump analysis, and block
//! splitting against a brute-force boundary scanner.

use std::collections::BTreeSet;
use std::path::PathBuf;

use proptest::prelude::*;
use revm::interpreter::analysis::to_analysed;
use revm::interpreter::opcode::OpCode;
use revm::primitives::{Bytecode, Bytes};
use rngscan_core::decoder::{
    decode_bytecode, encode_instructions, split_basic_blocks, Opcode, Terminator,
};
use rngscan_core::{Program, RawBytecode};

/// Bytes revm assigns to EOF-only instructions. Legacy code treats them as
/// undefined.
const EOF_ONLY: &[u8] = &[
    0xd0, 0xd1, 0xd2, 0xd3, 0xe0, 0xe1, 0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xec, 0xee, 0xf7,
    0xf8, 0xf9, 0xfb,
];

fn revm_name(name: &str) -> &str {
    match name {
        "KECCAK256" => "SHA3",
        "PREVRANDAO" => "DIFFICULTY",
        other => other,
    }
}

#[test]
fn opcode_table_matches_revm() {
    for byte in 0..=255u8 {
        let ours = Opcode::from_byte(byte);
        let theirs = OpCode::new(byte).filter(|_| !EOF_ONLY.contains(&byte));
        match theirs {
            None => assert!(
                matches!(ours, Opcode::Invalid(_)) || byte == 0xfe,
                "{byte:#04x}: {ours}"
            ),
            Some(op) if byte == 0xfe => assert_eq!(op.as_str(), "INVALID"),
            Some(op) => {
                assert_eq!(ours.name(), revm_name(op.as_str()), "{byte:#04x}");
                assert_eq!(
                    ours.stack_io(),
                    (op.inputs() as usize, op.outputs() as usize),
                    "{byte:#04x} {ours}"
                );
                let width = if op.is_push() {
                    byte as usize - 0x5f
                } else {
                    0
                };
                assert_eq!(ours.immediate_len(), width, "{byte:#04x}");
            }
        }
    }
}

fn revm_jumpdests(code: &[u8]) -> BTreeSet<usize> {
    let analysed = to_analysed(Bytecode::new_raw(Bytes::copy_from_slice(code)));
    let table = analysed
        .legacy_jump_table()
        .expect("legacy code is analysed");
    (0..code.len()).filter(|pc| table.is_valid(*pc)).collect()
}

/// Marks block starts by the splitting rule, walking raw bytes directly.
fn brute_force_block_starts(code: &[u8]) -> BTreeSet<usize> {
    let mut insn_starts = Vec::new();
    let mut pc = 0;
    while pc < code.len() {
        insn_starts.push(pc);
        let b = code[pc];
        pc += 1 + if (0x60..=0x7f).contains(&b) {
            (b - 0x5f) as usize
        } else {
            0
        };
    }
    let ends_block = |b: u8| {
        matches!(b, 0x56 | 0x57 | 0x00 | 0xf3 | 0xfd | 0xff)
            || matches!(Opcode::from_byte(b), Opcode::Invalid(_))
    };
    let mut starts = BTreeSet::new();
    let mut after_end = true;
    for &pc in &insn_starts {
        let b = code[pc];
        if after_end || b == 0x5b {
            starts.insert(pc);
        }
        after_end = ends_block(b);
    }
    starts
}

fn check_decoding(code: &[u8]) {
    let raw = RawBytecode::new(code.to_vec());
    let instrs = decode_bytecode(&raw);
    assert_eq!(encode_instructions(&instrs), code, "round trip");

    let mut expected_pc = 0;
    for i in &instrs {
        assert_eq!(i.pc, expected_pc);
        let width = i.opcode.immediate_len();
        match &i.immediate {
            Some(imm) => {
                assert!(width > 0);
                assert_eq!(imm.len() == width, !i.truncated);
            }
            None => assert_eq!(width, 0),
        }
        expected_pc += 1 + width;
    }

    let program = Program::from_bytecode_unchecked(raw);
    assert_eq!(program.jumpdests, revm_jumpdests(code), "jumpdest analysis");

    let blocks = split_basic_blocks(&instrs);
    let ids: BTreeSet<usize> = blocks.keys().copied().collect();
    assert_eq!(ids, brute_force_block_starts(code), "block boundaries");
    let total: usize = blocks.values().map(|b| b.instructions.len()).sum();
    assert_eq!(total, instrs.len(), "partition");
    for b in blocks.values() {
        let (last, body) = b.instructions.split_last().unwrap();
        for i in body {
            assert!(
                !i.opcode.is_branch() && !i.opcode.is_terminal(),
                "{:#x} inside block",
                i.pc
            );
        }
        for i in &b.instructions[1..] {
            assert_ne!(
                i.opcode,
                Opcode::Jumpdest,
                "jumpdest {:#x} not at block start",
                i.pc
            );
        }
        let t = match last.opcode {
            Opcode::Jump => Terminator::Jump,
            Opcode::Jumpi => Terminator::JumpI,
            op if op.is_terminal() => Terminator::Terminal(op),
            _ => Terminator::FallThrough,
        };
        assert_eq!(b.terminator, t);
    }
}

fn corpus_hex_files() -> Vec<PathBuf> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/scan");
    let mut out = Vec::new();
    for kind in ["vulnerable", "safe"] {
        for e in std::fs::read_dir(root.join(kind)).unwrap() {
            let p = e.unwrap().path();
            if p.extension().is_some_and(|x| x == "hex") {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn corpus_decodes_consistently() {
    let files = corpus_hex_files();
    assert!(files.len() >= 20);
    for p in files {
        let raw = RawBytecode::from_file_contents(&std::fs::read(&p).unwrap()).unwrap();
        check_decoding(&raw.bytes);
        assert_eq!(RawBytecode::from_hex(&raw.to_hex()).unwrap(), raw);
    }
}

#[test]
fn jump_example_splits_in_two() {
    let instrs = decode_bytecode(&RawBytecode::from_hex("6005565b00").unwrap());
    let blocks = split_basic_blocks(&instrs);
    let summary: Vec<(usize, usize, Terminator)> = blocks
        .values()
        .map(|b| (b.id, b.end_pc(), b.terminator))
        .collect();
    assert_eq!(
        summary,
        vec![
            (0, 3, Terminator::Jump),
            (3, 5, Terminator::Terminal(Opcode::Stop))
        ]
    );
}

#[test]
fn empty_input_has_no_blocks() {
    assert!(split_basic_blocks(&decode_bytecode(&RawBytecode::default())).is_empty());
}

fn opcode_heavy_bytes() -> impl Strategy<Value = Vec<u8>> {
    // Bias toward jumps, jumpdests and pushes so boundaries are exercised.
    let byte = prop_oneof![
        3 => any::<u8>(),
        1 => Just(0x5bu8),
        1 => Just(0x56u8),
        1 => Just(0x57u8),
        1 => 0x60u8..=0x7f,
    ];
    proptest::collection::vec(byte, 0..256)
}

proptest! {
    #[test]
    fn random_bytes_decode_consistently(code in opcode_heavy_bytes()) {
        check_decoding(&code);
    }

    #[test]
    fn hex_round_trips(code in proptest::collection::vec(any::<u8>(), 0..64), prefix in any::<bool>()) {
        let raw = RawBytecode::new(code);
        let text = raw.to_hex();
        let text = if prefix { text } else { text.trim_start_matches("0x").to_string() };
        prop_assert_eq!(RawBytecode::from_hex(&text).unwrap(), raw);
    }
}
