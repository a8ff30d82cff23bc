//! Memory taint against a byte-accurate concrete memory.
//!
//! Straight-line programs store block data or constants at concrete
//! addresses and send loaded words as `CALL` values. The oracle keeps one
//! taint set per byte; a load unions the sets of the 32 bytes it covers.

mod common;

use common::memory::*;
use proptest::prelude::*;
use rngscan_core::taint::TaintKind;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loads_over_approximate_concrete_memory(steps in proptest::collection::vec(unaligned_step(), 1..24)) {
        let (code, expected) = build(&steps);
        let got = observed(&code, expected.keys().copied());
        for (pc, want) in &expected {
            let have = &got[pc];
            prop_assert!(have.is_superset(want), "call {pc:#x}: model {have:?} misses oracle {want:?}");
        }
    }

    #[test]
    fn aligned_word_writes_are_exact(steps in proptest::collection::vec(aligned_step(), 1..24)) {
        let (code, expected) = build(&steps);
        let got = observed(&code, expected.keys().copied());
        prop_assert_eq!(got, expected);
    }
}

#[test]
fn overlapping_writes_fixed_case() {
    // A word at 0x80, a second word at 0x90 half over it, a byte at 0x9f.
    let steps = [
        Step::Store {
            addr: 0x80,
            narrow: false,
            source: Some(TaintKind::Timestamp),
            constant: 0,
        },
        Step::Store {
            addr: 0x90,
            narrow: false,
            source: Some(TaintKind::Number),
            constant: 0,
        },
        Step::Load { addr: 0x80 },
        Step::Load { addr: 0xa0 },
        Step::Store {
            addr: 0xa0,
            narrow: true,
            source: Some(TaintKind::Coinbase),
            constant: 0,
        },
        Step::Load { addr: 0x81 },
        Step::Load { addr: 0x100 },
    ];
    let (code, expected) = build(&steps);
    let got = observed(&code, expected.keys().copied());
    for (pc, want) in &expected {
        assert!(got[pc].is_superset(want), "{pc:#x}");
    }
    let kinds: Vec<Vec<TaintKind>> = got
        .values()
        .map(|s| s.iter().map(|(k, _)| *k).collect())
        .collect();
    assert_eq!(
        kinds,
        vec![
            vec![TaintKind::Number, TaintKind::Timestamp],
            vec![TaintKind::Number],
            vec![TaintKind::Coinbase, TaintKind::Number, TaintKind::Timestamp],
            vec![],
        ]
    );
}
