//! Transaction replay with dynamic taint tracking over world-state
//! fixtures, and the attack detectors that consume its traces.

pub mod detect;
pub mod fixture;
pub mod interp;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub use detect::{
    detect_manipulation, detect_rollback, AttackKind, AttackReport, Evidence, EvidenceStep,
    DEFAULT_WINDOW,
};
pub use fixture::{
    AccountFixture, BlockEnv, Fixture, FixtureError, TransactionRecord, SCHEMA_VERSION,
};
pub use interp::{
    replay_transaction, DynSource, Event, ExecutionTrace, FrameInfo, FrameKind, ReplayConfig,
    ReplayError, TxStatus, WorldState,
};

use crate::word::Address;

/// Address allow/deny lists applied to suspect transactions.
#[derive(Debug, Clone, Default)]
pub struct SuspectFilter {
    /// When set, only transactions whose target is listed are kept.
    pub allow: Option<BTreeSet<Address>>,
    /// Transactions whose caller or target is listed are dropped.
    pub deny: BTreeSet<Address>,
}

impl SuspectFilter {
    pub fn keeps(&self, tx: &TransactionRecord) -> bool {
        if self.deny.contains(&tx.target) || self.deny.contains(&tx.caller()) {
            return false;
        }
        self.allow.as_ref().is_none_or(|a| a.contains(&tx.target))
    }
}

/// One transaction to replay, with the fixture it runs against.
#[derive(Debug, Clone)]
pub struct WorkItem {
    pub path: PathBuf,
    pub fixture: Arc<Fixture>,
    pub tx: usize,
}

impl WorkItem {
    pub fn transaction(&self) -> &TransactionRecord {
        &self.fixture.transactions[self.tx]
    }

    pub fn caller(&self) -> Address {
        self.transaction().caller()
    }

    pub fn target(&self) -> Address {
        self.transaction().target
    }
}

/// Loads every `*.json` fixture in `dir` and yields the transactions that
/// pass `filter`, ordered by transaction id and then by file path.
pub fn ingest_suspects(dir: &Path, filter: &SuspectFilter) -> Result<Vec<WorkItem>, FixtureError> {
    let entries = std::fs::read_dir(dir).map_err(|source| FixtureError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| FixtureError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    ingest_files(&paths, filter)
}

/// As [`ingest_suspects`], over an explicit file list.
pub fn ingest_files(
    paths: &[PathBuf],
    filter: &SuspectFilter,
) -> Result<Vec<WorkItem>, FixtureError> {
    let mut items = Vec::new();
    for path in paths {
        let fixture = Arc::new(Fixture::load(path)?);
        for (i, tx) in fixture.transactions.iter().enumerate() {
            if filter.keeps(tx) {
                items.push(WorkItem {
                    path: path.clone(),
                    fixture: fixture.clone(),
                    tx: i,
                });
            }
        }
    }
    items.sort_by(|a, b| {
        (&a.transaction().id, &a.path, a.tx).cmp(&(&b.transaction().id, &b.path, b.tx))
    });
    Ok(items)
}
