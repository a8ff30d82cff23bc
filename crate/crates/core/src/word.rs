//! 256-bit EVM words, 20-byte addresses and the arithmetic shared by the
//! symbolic folder and the concrete replay interpreter.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha3::{Digest, Keccak256};

pub use ruint::aliases::U256;

/// Keccak-256 of `data`.
pub fn keccak256(data: &[u8]) -> [u8; 32] {
    let mut hasher = Keccak256::new();
    hasher.update(data);
    hasher.finalize().into()
}

pub fn word_from_be_slice(bytes: &[u8]) -> U256 {
    debug_assert!(bytes.len() <= 32);
    let mut buf = [0u8; 32];
    buf[32 - bytes.len()..].copy_from_slice(bytes);
    U256::from_be_bytes(buf)
}

pub fn word_to_be_bytes(value: U256) -> [u8; 32] {
    value.to_be_bytes::<32>()
}

/// Minimal `0x`-prefixed lowercase hex rendering (`0x0` for zero).
pub fn word_to_hex(value: U256) -> String {
    format!("{value:#x}")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid 256-bit hex quantity {text:?}: {reason}")]
pub struct WordParseError {
    pub text: String,
    pub reason: &'static str,
}

/// Parses a `0x`-prefixed hex quantity of at most 64 digits.
pub fn parse_word(text: &str) -> Result<U256, WordParseError> {
    let err = |reason| WordParseError {
        text: text.to_string(),
        reason,
    };
    let digits = text
        .strip_prefix("0x")
        .or_else(|| text.strip_prefix("0X"))
        .ok_or_else(|| err("missing 0x prefix"))?;
    if digits.is_empty() {
        return Err(err("no digits"));
    }
    if digits.len() > 64 {
        return Err(err("more than 64 hex digits"));
    }
    if !digits.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(err("non-hex digit"));
    }
    U256::from_str_radix(digits, 16).map_err(|_| err("out of range"))
}

pub fn usize_of(value: U256) -> Option<usize> {
    if value.bit_len() > usize::BITS as usize {
        None
    } else {
        Some(value.to::<usize>())
    }
}

fn is_negative(value: U256) -> bool {
    value.bit(255)
}

fn abs(value: U256) -> U256 {
    if is_negative(value) {
        value.wrapping_neg()
    } else {
        value
    }
}

pub fn div(a: U256, b: U256) -> U256 {
    a.checked_div(b).unwrap_or(U256::ZERO)
}

pub fn rem(a: U256, b: U256) -> U256 {
    a.checked_rem(b).unwrap_or(U256::ZERO)
}

pub fn sdiv(a: U256, b: U256) -> U256 {
    if b.is_zero() {
        return U256::ZERO;
    }
    let quotient = abs(a) / abs(b);
    if is_negative(a) != is_negative(b) {
        quotient.wrapping_neg()
    } else {
        quotient
    }
}

pub fn smod(a: U256, b: U256) -> U256 {
    if b.is_zero() {
        return U256::ZERO;
    }
    let r = abs(a) % abs(b);
    if is_negative(a) {
        r.wrapping_neg()
    } else {
        r
    }
}

pub fn addmod(a: U256, b: U256, m: U256) -> U256 {
    if m.is_zero() {
        U256::ZERO
    } else {
        a.add_mod(b, m)
    }
}

pub fn mulmod(a: U256, b: U256, m: U256) -> U256 {
    if m.is_zero() {
        U256::ZERO
    } else {
        a.mul_mod(b, m)
    }
}

pub fn exp(base: U256, exponent: U256) -> U256 {
    base.wrapping_pow(exponent)
}

pub fn signextend(byte_index: U256, value: U256) -> U256 {
    if byte_index >= U256::from(31) {
        return value;
    }
    let bit = byte_index.to::<usize>() * 8 + 7;
    let mask = (U256::from(1) << bit) - U256::from(1);
    if value.bit(bit) {
        value | !mask
    } else {
        value & mask
    }
}

pub fn byte(index: U256, value: U256) -> U256 {
    if index >= U256::from(32) {
        return U256::ZERO;
    }
    let i = index.to::<usize>();
    U256::from(word_to_be_bytes(value)[i])
}

pub fn shl(shift: U256, value: U256) -> U256 {
    if shift >= U256::from(256) {
        U256::ZERO
    } else {
        value << shift.to::<usize>()
    }
}

pub fn shr(shift: U256, value: U256) -> U256 {
    if shift >= U256::from(256) {
        U256::ZERO
    } else {
        value >> shift.to::<usize>()
    }
}

pub fn sar(shift: U256, value: U256) -> U256 {
    let negative = is_negative(value);
    if shift >= U256::from(256) {
        return if negative { U256::MAX } else { U256::ZERO };
    }
    let s = shift.to::<usize>();
    let shifted = value >> s;
    if negative && s > 0 {
        shifted | !(U256::MAX >> s)
    } else {
        shifted
    }
}

pub fn slt(a: U256, b: U256) -> bool {
    match (is_negative(a), is_negative(b)) {
        (true, false) => true,
        (false, true) => false,
        _ => a < b,
    }
}

pub fn bool_word(flag: bool) -> U256 {
    if flag {
        U256::from(1)
    } else {
        U256::ZERO
    }
}

/// A 20-byte account address.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Address(pub [u8; 20]);

impl Address {
    pub const ZERO: Address = Address([0u8; 20]);

    /// Low 20 bytes of a word, as the EVM truncates stack values to addresses.
    pub fn from_word(value: U256) -> Address {
        let bytes = word_to_be_bytes(value);
        let mut out = [0u8; 20];
        out.copy_from_slice(&bytes[12..]);
        Address(out)
    }

    pub fn to_word(self) -> U256 {
        word_from_be_slice(&self.0)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid address {text:?}: expected 0x followed by 40 hex digits")]
pub struct AddressParseError {
    pub text: String,
}

impl FromStr for Address {
    type Err = AddressParseError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let err = || AddressParseError {
            text: text.to_string(),
        };
        let digits = text.strip_prefix("0x").ok_or_else(err)?;
        if digits.len() != 40 {
            return Err(err());
        }
        let bytes = hex::decode(digits).map_err(|_| err())?;
        let mut out = [0u8; 20];
        out.copy_from_slice(&bytes);
        Ok(Address(out))
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// A word that serializes as a `0x`-hex string, usable as a map key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Debug)]
pub struct HexWord(pub U256);

impl fmt::Display for HexWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&word_to_hex(self.0))
    }
}

impl From<U256> for HexWord {
    fn from(value: U256) -> Self {
        HexWord(value)
    }
}

impl Serialize for HexWord {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        hex_word::serialize(&self.0, serializer)
    }
}

impl<'de> Deserialize<'de> for HexWord {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        hex_word::deserialize(deserializer).map(HexWord)
    }
}

/// Serde adapter for `U256` as a `0x`-hex string.
pub mod hex_word {
    use super::*;

    pub fn serialize<S: Serializer>(value: &U256, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&word_to_hex(*value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<U256, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_word(&text).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for byte strings as `0x`-hex.
pub mod hex_bytes {
    use super::*;

    pub fn serialize<S: Serializer>(value: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format!("0x{}", hex::encode(value)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(deserializer)?;
        let digits = text
            .strip_prefix("0x")
            .ok_or_else(|| serde::de::Error::custom("byte string must start with 0x"))?;
        hex::decode(digits).map_err(serde::de::Error::custom)
    }
}
