//! Deterministic single-node ledger simulator.
//!
//! Transactions are signed with ed25519 and carry the sender's public key,
//! from which the 20-byte sender address is derived. Sealing a block
//! applies the pending transactions, in submission order, to two contract
//! state machines:
//!
//! * `MessageRegistry` maps a 16-byte message id to a content locator and
//!   is write-once.
//! * `ActorRegistry` maps an actor reference to the locator of its
//!   metadata. Only certifiers fixed at deployment may write, and the
//!   latest write wins.
//!
//! Queries only observe sealed state.

mod chain;
mod tx;

use std::fmt;
use std::str::FromStr;

use ed25519_dalek::VerifyingKey;
use thiserror::Error;

pub use chain::{
    verify_blocks, verify_ledger_bytes, ActorRecord, ChainVerification, Ledger, MessageRecord,
};
pub use tx::{Block, Contract, Transaction, TxBody, TxReceipt, TxStatus};

use crate::codec::DecodeError;
use crate::crypto::sha256;

pub const ADDRESS_LEN: usize = 20;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address([u8; ADDRESS_LEN]);

impl Address {
    pub fn from_bytes(bytes: [u8; ADDRESS_LEN]) -> Self {
        Self(bytes)
    }

    /// First 20 bytes of the SHA-256 of the ed25519 public key.
    pub fn from_public_key(key: &VerifyingKey) -> Self {
        let digest = sha256(key.as_bytes());
        let mut out = [0u8; ADDRESS_LEN];
        out.copy_from_slice(&digest[..ADDRESS_LEN]);
        Self(out)
    }

    pub fn as_bytes(&self) -> &[u8; ADDRESS_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", self.to_hex())
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({self})")
    }
}

impl FromStr for Address {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.strip_prefix("0x").unwrap_or(s);
        let bytes = hex::decode(s).map_err(|e| format!("invalid address: {e}"))?;
        let arr: [u8; ADDRESS_LEN] = bytes
            .try_into()
            .map_err(|_| "address must be 20 bytes".to_string())?;
        Ok(Self(arr))
    }
}

/// Contract-level reasons a sealed transaction had no effect.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("message id already recorded")]
    AlreadyRecorded,
    #[error("sender is not a registered certifier")]
    NotCertifier,
    #[error("actor registry not deployed")]
    NotDeployed,
    #[error("actor registry already deployed")]
    AlreadyDeployed,
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("malformed call arguments")]
    BadArguments,
}

impl Rejection {
    pub fn code(&self) -> u8 {
        match self {
            Rejection::AlreadyRecorded => 1,
            Rejection::NotCertifier => 2,
            Rejection::NotDeployed => 3,
            Rejection::AlreadyDeployed => 4,
            Rejection::UnknownMethod(_) => 5,
            Rejection::BadArguments => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("transaction signature does not verify")]
    BadSignature,
    #[error("bad nonce: expected {expected}, got {got}")]
    BadNonce { expected: u64, got: u64 },
    #[error("unknown contract tag {0}")]
    UnknownContract(u8),
    #[error("transaction rejected: {0}")]
    MethodRejected(Rejection),
    #[error("not found")]
    NotFound,
    #[error("malformed ledger data: {0}")]
    Malformed(#[from] DecodeError),
    #[error("ledger fails verification at height {0}")]
    Corrupt(u64),
    #[error("ledger storage: {0}")]
    Io(String),
}
