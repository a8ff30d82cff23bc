//! Reference execution with revm and state snapshots for comparison.

use std::collections::BTreeMap;

use revm::db::{CacheDB, EmptyDB};
use revm::primitives::{
    AccountInfo, Address as RAddress, Bytecode, Bytes, ExecutionResult, SpecId, TxKind, B256,
    U256 as RU256,
};
use revm::Evm;
use rngscan_core::replay::{
    replay_transaction, Fixture, ReplayConfig, TransactionRecord, TxStatus,
};
use rngscan_core::word::{word_from_be_slice, word_to_be_bytes, Address, U256};

fn r_word(v: U256) -> RU256 {
    RU256::from_be_bytes(word_to_be_bytes(v))
}

fn our_word(v: RU256) -> U256 {
    word_from_be_slice(&v.to_be_bytes::<32>())
}

fn r_addr(a: Address) -> RAddress {
    RAddress::from(a.0)
}

fn our_addr(a: RAddress) -> Address {
    Address(a.into_array())
}

/// Balance and non-zero storage per account.
pub type Snapshot = BTreeMap<Address, (U256, BTreeMap<U256, U256>)>;

pub fn pre_state(fixture: &Fixture) -> Snapshot {
    fixture
        .accounts
        .iter()
        .map(|(a, acc)| {
            let storage = acc
                .storage
                .iter()
                .filter(|(_, v)| !v.0.is_zero())
                .map(|(k, v)| (k.0, v.0))
                .collect();
            (*a, (acc.balance.0, storage))
        })
        .collect()
}

pub fn reference(fixture: &Fixture, tx: &TransactionRecord) -> (Snapshot, TxStatus) {
    let mut db = CacheDB::new(EmptyDB::default());
    for (a, acc) in &fixture.accounts {
        let code = Bytecode::new_raw(Bytes::copy_from_slice(&acc.code));
        let info = AccountInfo::new(r_word(acc.balance.0), acc.nonce, code.hash_slow(), code);
        db.insert_account_info(r_addr(*a), info);
        for (k, v) in &acc.storage {
            db.insert_account_storage(r_addr(*a), r_word(k.0), r_word(v.0))
                .unwrap();
        }
    }
    for (n, h) in &fixture.block_env.blockhashes {
        db.block_hashes
            .insert(RU256::from(*n), B256::from(word_to_be_bytes(h.0)));
    }
    let env = &fixture.block_env;
    let difficulty = r_word(env.difficulty.0);
    let mut evm = Evm::builder()
        .with_db(db)
        .with_spec_id(SpecId::CANCUN)
        .modify_block_env(|b| {
            b.number = RU256::from(tx.block_number);
            b.timestamp = RU256::from(tx.timestamp.unwrap_or(env.timestamp));
            b.coinbase = r_addr(env.coinbase);
            b.gas_limit = RU256::from(env.gaslimit);
            b.basefee = RU256::ZERO;
            b.difficulty = difficulty;
            b.prevrandao = Some(B256::from(difficulty.to_be_bytes::<32>()));
        })
        .modify_tx_env(|t| {
            t.caller = r_addr(tx.from);
            t.transact_to = TxKind::Call(r_addr(tx.to));
            t.value = r_word(tx.value.0);
            t.data = Bytes::copy_from_slice(&tx.input);
            t.gas_limit = env.gaslimit;
            t.gas_price = RU256::ZERO;
            t.nonce = None;
        })
        .build();
    let outcome = evm.transact().expect("reference transaction is valid");
    let status = match outcome.result {
        ExecutionResult::Success { .. } => TxStatus::Success,
        ExecutionResult::Revert { .. } => TxStatus::Reverted,
        ExecutionResult::Halt { .. } => TxStatus::Failed,
    };
    let mut snap = pre_state(fixture);
    for (addr, account) in outcome.state {
        let addr = our_addr(addr);
        if account.is_selfdestructed() {
            snap.remove(&addr);
            continue;
        }
        if !account.is_touched() {
            continue;
        }
        let entry = snap.entry(addr).or_default();
        entry.0 = our_word(account.info.balance);
        for (k, slot) in account.storage {
            let (k, v) = (our_word(k), our_word(slot.present_value()));
            if v.is_zero() {
                entry.1.remove(&k);
            } else {
                entry.1.insert(k, v);
            }
        }
    }
    (snap, status)
}

pub fn ours(fixture: &Fixture, tx: &TransactionRecord) -> (Snapshot, TxStatus, bool) {
    let trace = replay_transaction(fixture, tx, &ReplayConfig::default()).unwrap();
    let snap = trace
        .final_state
        .accounts
        .iter()
        .map(|(a, acc)| {
            let storage = acc.storage().filter(|(_, v)| !v.is_zero()).collect();
            (*a, (acc.balance, storage))
        })
        .collect();
    (snap, trace.status, trace.partial)
}

/// Accounts that end empty are indistinguishable from absent ones.
pub fn normalize(mut s: Snapshot) -> Snapshot {
    s.retain(|_, (b, st)| !b.is_zero() || !st.is_empty());
    s
}
