//! Replays every fixture transaction with revm and compares the resulting
//! balances and storage with the interpreter's final state.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::reference::*;
use common::*;
use rngscan_core::replay::{Fixture, TransactionRecord};
use rngscan_core::word::{Address, U256};

#[test]
fn final_state_matches_reference_evm() {
    let mut checked = 0;
    let mut attack_txs = BTreeSet::new();
    for (path, fixture) in replay_fixtures() {
        for tx in &fixture.transactions {
            let (expected, expected_status) = reference(&fixture, tx);
            let (got, status, partial) = ours(&fixture, tx);
            assert!(
                !partial,
                "{}: {} used an unsupported instruction",
                path.display(),
                tx.id
            );
            assert_eq!(
                status,
                expected_status,
                "{}: {} status",
                path.display(),
                tx.id
            );
            let (expected, got) = (normalize(expected), normalize(got));
            for (addr, want) in &expected {
                assert_eq!(
                    got.get(addr),
                    Some(want),
                    "{}: {} account {addr}",
                    path.display(),
                    tx.id
                );
            }
            assert_eq!(got, expected, "{}: {}", path.display(), tx.id);
            if tx.label.as_deref().is_some_and(|l| l.starts_with("attack")) {
                attack_txs.insert(tx.id.clone());
            }
            checked += 1;
        }
    }
    assert!(checked >= 10);
    assert!(attack_txs.len() >= 5, "{attack_txs:?}");
}

mod generated {
    use super::*;
    use proptest::prelude::*;
    use rngscan_core::replay::{AccountFixture, BlockEnv};
    use rngscan_core::word::HexWord;

    /// Binary and unary operators run by both interpreters.
    const BINARY: &[u8] = &[
        0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x0a, 0x0b, 0x10, 0x11, 0x12, 0x13, 0x14, 0x16,
        0x17, 0x18, 0x1a, 0x1b, 0x1c, 0x1d,
    ];
    const UNARY: &[u8] = &[0x15, 0x19];
    const TERNARY: &[u8] = &[0x08, 0x09];
    /// Environment reads that push one word.
    const ENV: &[u8] = &[
        0x30, 0x32, 0x33, 0x34, 0x36, 0x41, 0x42, 0x43, 0x44, 0x45, 0x47, 0x58, 0x59,
    ];

    #[derive(Debug, Clone)]
    enum Item {
        Push(u8, Vec<u8>),
        Env(u8),
        Op(u8),
        CallData(u8),
        MStore(u8),
        MStore8(u8),
        MLoad(u8),
        SStore(u8),
        SLoad(u8),
        TStore(u8),
        TLoad(u8),
        Sha3(u8, u8),
        Dup(u8),
        Swap(u8),
        Pop,
    }

    fn item() -> impl Strategy<Value = Item> {
        prop_oneof![
            4 => (1u8..=32).prop_flat_map(|n| proptest::collection::vec(any::<u8>(), n as usize).prop_map(move |b| Item::Push(n, b))),
            2 => proptest::sample::select(ENV.to_vec()).prop_map(Item::Env),
            4 => proptest::sample::select([BINARY, UNARY, TERNARY].concat()).prop_map(Item::Op),
            1 => (0u8..0x40).prop_map(Item::CallData),
            2 => (0u8..0xc0).prop_map(Item::MStore),
            1 => (0u8..0xc0).prop_map(Item::MStore8),
            2 => (0u8..0xc0).prop_map(Item::MLoad),
            2 => (0u8..4).prop_map(Item::SStore),
            2 => (0u8..6).prop_map(Item::SLoad),
            1 => (0u8..4).prop_map(Item::TStore),
            1 => (0u8..4).prop_map(Item::TLoad),
            1 => (0u8..0x80, 0u8..0x60).prop_map(|(o, l)| Item::Sha3(o, l)),
            1 => (1u8..=16).prop_map(Item::Dup),
            1 => (1u8..=16).prop_map(Item::Swap),
            1 => Just(Item::Pop),
        ]
    }

    fn assemble(items: &[Item], revert: bool) -> Vec<u8> {
        let mut code = Vec::new();
        let mut depth = 0usize;
        for it in items {
            let (pops, pushes, bytes): (usize, usize, Vec<u8>) = match it {
                Item::Push(n, b) => (0, 1, [vec![0x5f + n], b.clone()].concat()),
                Item::Env(op) => (0, 1, vec![*op]),
                Item::Op(op) if UNARY.contains(op) => (1, 1, vec![*op]),
                Item::Op(op) if TERNARY.contains(op) => (3, 1, vec![*op]),
                Item::Op(op) => (2, 1, vec![*op]),
                Item::CallData(o) => (0, 1, vec![0x60, *o, 0x35]),
                Item::MStore(o) => (1, 0, vec![0x60, *o, 0x52]),
                Item::MStore8(o) => (1, 0, vec![0x60, *o, 0x53]),
                Item::MLoad(o) => (0, 1, vec![0x60, *o, 0x51]),
                Item::SStore(k) => (1, 0, vec![0x60, *k, 0x55]),
                Item::SLoad(k) => (0, 1, vec![0x60, *k, 0x54]),
                Item::TStore(k) => (1, 0, vec![0x60, *k, 0x5d]),
                Item::TLoad(k) => (0, 1, vec![0x60, *k, 0x5c]),
                Item::Sha3(o, l) => (0, 1, vec![0x60, *l, 0x60, *o, 0x20]),
                Item::Dup(n) => (*n as usize, *n as usize + 1, vec![0x7f + n]),
                Item::Swap(n) => (*n as usize + 1, *n as usize + 1, vec![0x8f + n]),
                Item::Pop => (1, 0, vec![0x50]),
            };
            if depth < pops || depth - pops + pushes > 64 {
                continue;
            }
            depth = depth - pops + pushes;
            code.extend(bytes);
        }
        // Make every remaining stack word observable.
        for i in 0..depth {
            code.extend([0x61, 0x01, i as u8, 0x55]);
        }
        code.extend(if revert {
            vec![0x5f, 0x5f, 0xfd]
        } else {
            vec![0x00]
        });
        code
    }

    fn fixture(code: Vec<u8>, input: Vec<u8>, value: u64) -> Fixture {
        let contract = Address::from_word(U256::from(0xc0de));
        let sender = Address::from_word(U256::from(0xa11ce));
        let mut accounts = BTreeMap::new();
        accounts.insert(
            contract,
            AccountFixture {
                balance: HexWord(U256::from(5)),
                nonce: 1,
                code,
                // Every slot the program can touch, so none is missing.
                storage: (0u64..8)
                    .chain(0x100..0x140)
                    .map(|k| {
                        (
                            HexWord(U256::from(k)),
                            HexWord(U256::from(if k % 3 == 1 { 0x77 * k } else { 0 })),
                        )
                    })
                    .collect(),
            },
        );
        accounts.insert(
            sender,
            AccountFixture {
                balance: HexWord(U256::from(1_000_000u64)),
                nonce: 3,
                code: Vec::new(),
                storage: BTreeMap::new(),
            },
        );
        let tx = TransactionRecord {
            id: "0x01".into(),
            from: sender,
            to: contract,
            value: HexWord(U256::from(value)),
            input,
            block_number: 19_000_000,
            timestamp: Some(1_710_000_000),
            caller: None,
            target: contract,
            label: None,
        };
        Fixture {
            schema_version: rngscan_core::replay::SCHEMA_VERSION,
            name: "generated".into(),
            block_env: BlockEnv {
                number: 19_000_000,
                timestamp: 1_710_000_000,
                coinbase: Address::from_word(U256::from(0xfee)),
                difficulty: HexWord(U256::from(0x1234_5678u64)),
                gaslimit: 30_000_000,
                blockhashes: BTreeMap::new(),
            },
            accounts,
            transactions: vec![tx],
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn generated_programs_match_reference_evm(
            items in proptest::collection::vec(item(), 0..48),
            revert in proptest::bool::weighted(0.2),
            input in proptest::collection::vec(any::<u8>(), 0..70),
            value in 0u64..1000,
        ) {
            let f = fixture(assemble(&items, revert), input, value);
            let tx = &f.transactions[0];
            let (expected, expected_status) = reference(&f, tx);
            let (got, status, partial) = ours(&f, tx);
            prop_assert!(!partial);
            prop_assert_eq!(status, expected_status);
            prop_assert_eq!(normalize(got), normalize(expected));
        }
    }
}
