use std::fmt;

macro_rules! opcode_table {
    ($( $byte:literal => $variant:ident, $name:literal, $pops:literal, $pushes:literal; )*) => {
        /// EVM instruction set (Cancun). Families with an index (`PUSHn`,
        /// `DUPn`, `SWAPn`, `LOGn`) carry it as a payload; every byte without
        /// an assigned instruction decodes to `Invalid(byte)`.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Opcode {
            $( $variant, )*
            /// `PUSH0` through `PUSH32`; the payload is the immediate width.
            Push(u8),
            Dup(u8),
            Swap(u8),
            Log(u8),
            Invalid(u8),
        }

        impl Opcode {
            pub fn from_byte(byte: u8) -> Opcode {
                match byte {
                    $( $byte => Opcode::$variant, )*
                    0x5f..=0x7f => Opcode::Push(byte - 0x5f),
                    0x80..=0x8f => Opcode::Dup(byte - 0x7f),
                    0x90..=0x9f => Opcode::Swap(byte - 0x8f),
                    0xa0..=0xa4 => Opcode::Log(byte - 0xa0),
                    other => Opcode::Invalid(other),
                }
            }

            pub fn byte(self) -> u8 {
                match self {
                    $( Opcode::$variant => $byte, )*
                    Opcode::Push(n) => 0x5f + n,
                    Opcode::Dup(n) => 0x7f + n,
                    Opcode::Swap(n) => 0x8f + n,
                    Opcode::Log(n) => 0xa0 + n,
                    Opcode::Invalid(b) => b,
                }
            }

            /// Canonical mnemonic; `Invalid` renders as `INVALID`.
            pub fn name(self) -> String {
                match self {
                    $( Opcode::$variant => $name.to_string(), )*
                    Opcode::Push(n) => format!("PUSH{n}"),
                    Opcode::Dup(n) => format!("DUP{n}"),
                    Opcode::Swap(n) => format!("SWAP{n}"),
                    Opcode::Log(n) => format!("LOG{n}"),
                    Opcode::Invalid(_) => "INVALID".to_string(),
                }
            }

            /// Inverse of [`Opcode::name`]; also accepts `KECCAK256` and `PREVRANDAO`.
            pub fn from_name(name: &str) -> Option<Opcode> {
                let upper = name.to_ascii_uppercase();
                let indexed = |prefix: &str, lo: u8, hi: u8| -> Option<u8> {
                    let n: u8 = upper.strip_prefix(prefix)?.parse().ok()?;
                    (lo..=hi).contains(&n).then_some(n)
                };
                if let Some(n) = indexed("PUSH", 0, 32) {
                    return Some(Opcode::Push(n));
                }
                if let Some(n) = indexed("DUP", 1, 16) {
                    return Some(Opcode::Dup(n));
                }
                if let Some(n) = indexed("SWAP", 1, 16) {
                    return Some(Opcode::Swap(n));
                }
                if let Some(n) = indexed("LOG", 0, 4) {
                    return Some(Opcode::Log(n));
                }
                match upper.as_str() {
                    $( $name => Some(Opcode::$variant), )*
                    "KECCAK256" => Some(Opcode::Sha3),
                    "PREVRANDAO" => Some(Opcode::Difficulty),
                    "INVALID" => Some(Opcode::Invalid(0xfe)),
                    _ => None,
                }
            }

            /// (items popped, items pushed).
            pub fn stack_io(self) -> (usize, usize) {
                match self {
                    $( Opcode::$variant => ($pops, $pushes), )*
                    Opcode::Push(_) => (0, 1),
                    Opcode::Dup(n) => (n as usize, n as usize + 1),
                    Opcode::Swap(n) => (n as usize + 1, n as usize + 1),
                    Opcode::Log(n) => (2 + n as usize, 0),
                    Opcode::Invalid(_) => (0, 0),
                }
            }
        }
    };
}

opcode_table! {
    0x00 => Stop, "STOP", 0, 0;
    0x01 => Add, "ADD", 2, 1;
    0x02 => Mul, "MUL", 2, 1;
    0x03 => Sub, "SUB", 2, 1;
    0x04 => Div, "DIV", 2, 1;
    0x05 => Sdiv, "SDIV", 2, 1;
    0x06 => Mod, "MOD", 2, 1;
    0x07 => Smod, "SMOD", 2, 1;
    0x08 => Addmod, "ADDMOD", 3, 1;
    0x09 => Mulmod, "MULMOD", 3, 1;
    0x0a => Exp, "EXP", 2, 1;
    0x0b => Signextend, "SIGNEXTEND", 2, 1;
    0x10 => Lt, "LT", 2, 1;
    0x11 => Gt, "GT", 2, 1;
    0x12 => Slt, "SLT", 2, 1;
    0x13 => Sgt, "SGT", 2, 1;
    0x14 => Eq, "EQ", 2, 1;
    0x15 => Iszero, "ISZERO", 1, 1;
    0x16 => And, "AND", 2, 1;
    0x17 => Or, "OR", 2, 1;
    0x18 => Xor, "XOR", 2, 1;
    0x19 => Not, "NOT", 1, 1;
    0x1a => Byte, "BYTE", 2, 1;
    0x1b => Shl, "SHL", 2, 1;
    0x1c => Shr, "SHR", 2, 1;
    0x1d => Sar, "SAR", 2, 1;
    0x20 => Sha3, "SHA3", 2, 1;
    0x30 => Address, "ADDRESS", 0, 1;
    0x31 => Balance, "BALANCE", 1, 1;
    0x32 => Origin, "ORIGIN", 0, 1;
    0x33 => Caller, "CALLER", 0, 1;
    0x34 => Callvalue, "CALLVALUE", 0, 1;
    0x35 => Calldataload, "CALLDATALOAD", 1, 1;
    0x36 => Calldatasize, "CALLDATASIZE", 0, 1;
    0x37 => Calldatacopy, "CALLDATACOPY", 3, 0;
    0x38 => Codesize, "CODESIZE", 0, 1;
    0x39 => Codecopy, "CODECOPY", 3, 0;
    0x3a => Gasprice, "GASPRICE", 0, 1;
    0x3b => Extcodesize, "EXTCODESIZE", 1, 1;
    0x3c => Extcodecopy, "EXTCODECOPY", 4, 0;
    0x3d => Returndatasize, "RETURNDATASIZE", 0, 1;
    0x3e => Returndatacopy, "RETURNDATACOPY", 3, 0;
    0x3f => Extcodehash, "EXTCODEHASH", 1, 1;
    0x40 => Blockhash, "BLOCKHASH", 1, 1;
    0x41 => Coinbase, "COINBASE", 0, 1;
    0x42 => Timestamp, "TIMESTAMP", 0, 1;
    0x43 => Number, "NUMBER", 0, 1;
    0x44 => Difficulty, "DIFFICULTY", 0, 1;
    0x45 => Gaslimit, "GASLIMIT", 0, 1;
    0x46 => Chainid, "CHAINID", 0, 1;
    0x47 => Selfbalance, "SELFBALANCE", 0, 1;
    0x48 => Basefee, "BASEFEE", 0, 1;
    0x49 => Blobhash, "BLOBHASH", 1, 1;
    0x4a => Blobbasefee, "BLOBBASEFEE", 0, 1;
    0x50 => Pop, "POP", 1, 0;
    0x51 => Mload, "MLOAD", 1, 1;
    0x52 => Mstore, "MSTORE", 2, 0;
    0x53 => Mstore8, "MSTORE8", 2, 0;
    0x54 => Sload, "SLOAD", 1, 1;
    0x55 => Sstore, "SSTORE", 2, 0;
    0x56 => Jump, "JUMP", 1, 0;
    0x57 => Jumpi, "JUMPI", 2, 0;
    0x58 => Pc, "PC", 0, 1;
    0x59 => Msize, "MSIZE", 0, 1;
    0x5a => Gas, "GAS", 0, 1;
    0x5b => Jumpdest, "JUMPDEST", 0, 0;
    0x5c => Tload, "TLOAD", 1, 1;
    0x5d => Tstore, "TSTORE", 2, 0;
    0x5e => Mcopy, "MCOPY", 3, 0;
    0xf0 => Create, "CREATE", 3, 1;
    0xf1 => Call, "CALL", 7, 1;
    0xf2 => Callcode, "CALLCODE", 7, 1;
    0xf3 => Return, "RETURN", 2, 0;
    0xf4 => Delegatecall, "DELEGATECALL", 6, 1;
    0xf5 => Create2, "CREATE2", 4, 1;
    0xfa => Staticcall, "STATICCALL", 6, 1;
    0xfd => Revert, "REVERT", 2, 0;
    0xff => Selfdestruct, "SELFDESTRUCT", 1, 0;
}

impl Opcode {
    /// Width of the inline immediate (PUSH1..PUSH32), zero otherwise.
    pub fn immediate_len(self) -> usize {
        match self {
            Opcode::Push(n) => n as usize,
            _ => 0,
        }
    }

    /// Ends execution of the current frame.
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            Opcode::Stop
                | Opcode::Return
                | Opcode::Revert
                | Opcode::Selfdestruct
                | Opcode::Invalid(_)
        )
    }

    pub fn is_branch(self) -> bool {
        matches!(self, Opcode::Jump | Opcode::Jumpi)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}
