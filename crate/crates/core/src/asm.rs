//! A minimal line-oriented EVM assembler used to author fixture contracts.
//!
//! ```text
//! ; comment            // also a comment
//! PUSH1 0x80           explicit width
//! PUSH 1000            smallest width that fits (at least PUSH1)
//! PUSH @loop           PUSH2 of a label's pc
//! loop: JUMPDEST       labels bind to the pc of the next instruction
//! .data 0xfe00         raw bytes
//! ```

use std::collections::BTreeMap;

use crate::decoder::Opcode;
use crate::word::{word_to_be_bytes, U256};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct AsmError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assembled {
    pub code: Vec<u8>,
    pub labels: BTreeMap<String, usize>,
}

impl Assembled {
    pub fn label(&self, name: &str) -> usize {
        *self
            .labels
            .get(name)
            .unwrap_or_else(|| panic!("no label {name:?}"))
    }

    pub fn hex(&self) -> String {
        format!("0x{}", hex::encode(&self.code))
    }
}

enum Item {
    Op(Opcode),
    Push { width: usize, value: U256 },
    PushLabel(String),
    Data(Vec<u8>),
}

impl Item {
    fn len(&self) -> usize {
        match self {
            Item::Op(_) => 1,
            Item::Push { width, .. } => 1 + width,
            Item::PushLabel(_) => 3,
            Item::Data(bytes) => bytes.len(),
        }
    }
}

fn parse_number(token: &str) -> Option<U256> {
    if let Some(hex) = token.strip_prefix("0x") {
        U256::from_str_radix(hex, 16).ok()
    } else {
        U256::from_str_radix(token, 10).ok()
    }
}

pub fn assemble(source: &str) -> Result<Assembled, AsmError> {
    let mut items: Vec<(usize, Item)> = Vec::new();
    let mut pending_labels: Vec<(usize, String)> = Vec::new();
    let mut label_items: BTreeMap<String, usize> = BTreeMap::new();

    for (idx, raw_line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let err = |message: String| AsmError {
            line: line_no,
            message,
        };
        let line = raw_line
            .split(';')
            .next()
            .unwrap_or("")
            .split("//")
            .next()
            .unwrap_or("");
        let mut tokens = line.split_whitespace().peekable();
        while let Some(token) = tokens.next() {
            if let Some(name) = token.strip_suffix(':') {
                if name.is_empty() {
                    return Err(err("empty label".into()));
                }
                pending_labels.push((line_no, name.to_string()));
                continue;
            }
            let item = if token == ".data" {
                let arg = tokens
                    .next()
                    .ok_or_else(|| err(".data needs bytes".into()))?;
                let digits = arg.strip_prefix("0x").unwrap_or(arg);
                Item::Data(hex::decode(digits).map_err(|e| err(format!("bad .data: {e}")))?)
            } else {
                let upper = token.to_ascii_uppercase();
                if upper == "PUSH" || (upper.starts_with("PUSH") && upper != "PUSH0") {
                    let arg = tokens
                        .next()
                        .ok_or_else(|| err(format!("{token} needs an operand")))?;
                    if let Some(label) = arg.strip_prefix('@') {
                        if upper != "PUSH" && upper != "PUSH2" {
                            return Err(err("label operands use PUSH or PUSH2".into()));
                        }
                        Item::PushLabel(label.to_string())
                    } else {
                        let value = parse_number(arg)
                            .ok_or_else(|| err(format!("bad push operand {arg:?}")))?;
                        let needed = value.byte_len().max(1);
                        let width = if upper == "PUSH" {
                            needed
                        } else {
                            match Opcode::from_name(&upper) {
                                Some(Opcode::Push(n)) => n as usize,
                                _ => return Err(err(format!("unknown mnemonic {token}"))),
                            }
                        };
                        if needed > width {
                            return Err(err(format!("{arg} does not fit in {token}")));
                        }
                        Item::Push { width, value }
                    }
                } else {
                    match Opcode::from_name(&upper) {
                        Some(op) => Item::Op(op),
                        None => return Err(err(format!("unknown mnemonic {token}"))),
                    }
                }
            };
            for (l, name) in pending_labels.drain(..) {
                if label_items.insert(name.clone(), items.len()).is_some() {
                    return Err(AsmError {
                        line: l,
                        message: format!("duplicate label {name}"),
                    });
                }
            }
            items.push((line_no, item));
        }
    }
    // Trailing labels bind to the end of code.
    for (l, name) in pending_labels.drain(..) {
        if label_items.insert(name.clone(), items.len()).is_some() {
            return Err(AsmError {
                line: l,
                message: format!("duplicate label {name}"),
            });
        }
    }

    let mut offsets = Vec::with_capacity(items.len() + 1);
    let mut pc = 0;
    for (_, item) in &items {
        offsets.push(pc);
        pc += item.len();
    }
    offsets.push(pc);
    let labels: BTreeMap<String, usize> = label_items
        .into_iter()
        .map(|(name, idx)| (name, offsets[idx]))
        .collect();

    let mut code = Vec::with_capacity(pc);
    for (line, item) in &items {
        match item {
            Item::Op(op) => code.push(op.byte()),
            Item::Push { width, value } => {
                code.push(Opcode::Push(*width as u8).byte());
                code.extend_from_slice(&word_to_be_bytes(*value)[32 - width..]);
            }
            Item::PushLabel(name) => {
                let target = *labels.get(name).ok_or_else(|| AsmError {
                    line: *line,
                    message: format!("undefined label {name}"),
                })?;
                let target = u16::try_from(target).map_err(|_| AsmError {
                    line: *line,
                    message: format!("label {name} beyond PUSH2 range"),
                })?;
                code.push(Opcode::Push(2).byte());
                code.extend_from_slice(&target.to_be_bytes());
            }
            Item::Data(bytes) => code.extend_from_slice(bytes),
        }
    }
    Ok(Assembled { code, labels })
}
