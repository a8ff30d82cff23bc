//! World-state fixture documents.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::word::{hex_bytes, Address, HexWord};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockEnv {
    pub number: u64,
    pub timestamp: u64,
    pub coinbase: Address,
    pub difficulty: HexWord,
    pub gaslimit: u64,
    /// Hashes of earlier blocks, keyed by block number.
    #[serde(default)]
    pub blockhashes: BTreeMap<u64, HexWord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountFixture {
    pub balance: HexWord,
    #[serde(default)]
    pub nonce: u64,
    #[serde(default, with = "hex_bytes", skip_serializing_if = "Vec::is_empty")]
    pub code: Vec<u8>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub storage: BTreeMap<HexWord, HexWord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransactionRecord {
    pub id: String,
    pub from: Address,
    pub to: Address,
    #[serde(default)]
    pub value: HexWord,
    #[serde(default, with = "hex_bytes")]
    pub input: Vec<u8>,
    pub block_number: u64,
    /// Defaults to the fixture's block timestamp.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
    /// Contract suspected of attacking. Defaults to `to`, or to `from`
    /// when `to` is the target itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caller: Option<Address>,
    /// Contract suspected of being attacked.
    pub target: Address,
    /// Free-form annotation; ignored by detection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl TransactionRecord {
    pub fn caller(&self) -> Address {
        self.caller.unwrap_or(if self.to == self.target {
            self.from
        } else {
            self.to
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub schema_version: u32,
    pub name: String,
    pub block_env: BlockEnv,
    pub accounts: BTreeMap<Address, AccountFixture>,
    pub transactions: Vec<TransactionRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: at {field}: {message}")]
    Parse {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("{path}: unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    Version { path: PathBuf, found: u32 },
    #[error("{path}: transaction {tx}: {message}")]
    Invalid {
        path: PathBuf,
        tx: String,
        message: String,
    },
}

impl Fixture {
    pub fn from_json(text: &str, path: &Path) -> Result<Fixture, FixtureError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let fixture: Fixture =
            serde_path_to_error::deserialize(de).map_err(|e| FixtureError::Parse {
                path: path.to_path_buf(),
                field: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        if fixture.schema_version != SCHEMA_VERSION {
            return Err(FixtureError::Version {
                path: path.to_path_buf(),
                found: fixture.schema_version,
            });
        }
        for tx in &fixture.transactions {
            for (role, addr) in [("from", tx.from), ("to", tx.to), ("target", tx.target)] {
                if !fixture.accounts.contains_key(&addr) {
                    return Err(FixtureError::Invalid {
                        path: path.to_path_buf(),
                        tx: tx.id.clone(),
                        message: format!("{role} address {addr} is not in accounts"),
                    });
                }
            }
            if fixture.accounts[&tx.to].code.is_empty() {
                return Err(FixtureError::Invalid {
                    path: path.to_path_buf(),
                    tx: tx.id.clone(),
                    message: format!("to address {} has no code", tx.to),
                });
            }
        }
        Ok(fixture)
    }

    pub fn load(path: &Path) -> Result<Fixture, FixtureError> {
        let text = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Fixture::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("fixtures serialize");
        s.push('\n');
        s
    }
}
