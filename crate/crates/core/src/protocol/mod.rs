//! The data manager (SDM), user directory (UD) and key manager (SKM)
//! services, their client, and the secure channel between them.
//!
//! Every connection opens with a three-message handshake that
//! authenticates both ends with their signing keys and agrees a session
//! key from ephemeral X25519 exchanges. After that, every frame is sealed
//! with ChaCha20-Poly1305 under the session key, with the per-direction
//! frame counter as nonce.

mod client;
mod handshake;
mod identity;
mod local;
mod messages;
mod server;
mod wire;

use thiserror::Error;

pub use client::{client_read, connect, Connection, SliceOutcome};
pub use handshake::{client_handshake, client_signing_input, server_handshake, ReplayGuard, Role, Session};
pub use identity::{ActorMetadata, Identity, KeyDirectory, PublicIdentity};
pub use local::LocalNetwork;
pub use messages::{
    ClientAuth, ClientHello, Request, Response, ServerChallenge, TAG_CLIENT_AUTH,
    TAG_CLIENT_HELLO, TAG_ERROR, TAG_HANDSHAKE_REJECT, TAG_SERVER_CHALLENGE,
};
pub use server::{
    actor_handle, serve_connection, serve_tcp, ActorBlinding, Clock, Conversation, Deployment,
    FixedClock, SecureDataManager, SecureKeyManager, Service, ServiceCore, SystemClock,
    UserDirectory,
};
pub use wire::{pipe, read_frame, write_frame, Channel, PipeEnd, Trace, MAX_FRAME};

use crate::abe::AbeError;
use crate::cas::CasError;
use crate::ledger::LedgerError;

/// Coarse error classes shared by the wire protocol and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorClass {
    InvalidInput,
    NotFound,
    Integrity,
    AccessDenied,
    Authentication,
    Authorization,
    LedgerRejected,
    Storage,
    ChainInvalid,
    Transport,
    Internal,
}

impl ErrorClass {
    /// Process exit code, 65 through 75.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::InvalidInput => 65,
            ErrorClass::NotFound => 66,
            ErrorClass::Integrity => 67,
            ErrorClass::AccessDenied => 68,
            ErrorClass::Authentication => 69,
            ErrorClass::Authorization => 70,
            ErrorClass::LedgerRejected => 71,
            ErrorClass::Storage => 72,
            ErrorClass::ChainInvalid => 73,
            ErrorClass::Transport => 74,
            ErrorClass::Internal => 75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("peer authentication failed")]
    AuthFailure,
    #[error("client address is not registered")]
    UnknownClient,
    #[error("handshake nonce was already used")]
    ReplayDetected,
    #[error("request sent before completing the handshake")]
    Unauthenticated,
    #[error("invalid policy: {0}")]
    PolicySyntax(String),
    #[error("submission has no slices")]
    EmptyContainer,
    #[error("duplicate slice label {0:?}")]
    DuplicateLabel(String),
    #[error("attribute set is empty")]
    EmptyAttributeSet,
    #[error("caller is not a registered certifier")]
    NotCertifier,
    #[error("caller has no certified attributes")]
    NotCertified,
    #[error("integrity violation")]
    IntegrityViolation,
    #[error("not found")]
    NotFound,
    #[error("attributes do not satisfy the policy")]
    PolicyNotSatisfied,
    #[error("ledger rejected the transaction: {0}")]
    LedgerRejected(String),
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ProtocolError {
    pub fn class(&self) -> ErrorClass {
        use ProtocolError::*;
        match self {
            AuthFailure | UnknownClient | ReplayDetected | Unauthenticated => {
                ErrorClass::Authentication
            }
            PolicySyntax(_) | EmptyContainer | DuplicateLabel(_) | EmptyAttributeSet => {
                ErrorClass::InvalidInput
            }
            NotCertifier | NotCertified => ErrorClass::Authorization,
            IntegrityViolation => ErrorClass::Integrity,
            NotFound => ErrorClass::NotFound,
            PolicyNotSatisfied => ErrorClass::AccessDenied,
            LedgerRejected(_) => ErrorClass::LedgerRejected,
            StorageFailure(_) => ErrorClass::Storage,
            Transport(_) | Malformed(_) => ErrorClass::Transport,
            Internal(_) => ErrorClass::Internal,
        }
    }

    /// Wire code carried in error frames.
    pub fn code(&self) -> u16 {
        use ProtocolError::*;
        match self {
            AuthFailure => 1,
            UnknownClient => 2,
            ReplayDetected => 3,
            Unauthenticated => 4,
            PolicySyntax(_) => 10,
            EmptyContainer => 11,
            DuplicateLabel(_) => 12,
            EmptyAttributeSet => 13,
            NotCertifier => 20,
            NotCertified => 21,
            IntegrityViolation => 30,
            NotFound => 31,
            PolicyNotSatisfied => 32,
            LedgerRejected(_) => 40,
            StorageFailure(_) => 41,
            Transport(_) => 50,
            Malformed(_) => 51,
            Internal(_) => 60,
        }
    }

    /// Rebuilds an error received in an error frame.
    pub fn from_wire(code: u16, detail: String) -> Self {
        use ProtocolError::*;
        match code {
            1 => AuthFailure,
            2 => UnknownClient,
            3 => ReplayDetected,
            4 => Unauthenticated,
            10 => PolicySyntax(detail),
            11 => EmptyContainer,
            12 => DuplicateLabel(detail),
            13 => EmptyAttributeSet,
            20 => NotCertifier,
            21 => NotCertified,
            30 => IntegrityViolation,
            31 => NotFound,
            32 => PolicyNotSatisfied,
            40 => LedgerRejected(detail),
            41 => StorageFailure(detail),
            50 => Transport(detail),
            51 => Malformed(detail),
            _ => Internal(detail),
        }
    }

    /// Free-text detail sent alongside the code.
    pub fn detail(&self) -> String {
        use ProtocolError::*;
        match self {
            PolicySyntax(d) | DuplicateLabel(d) | LedgerRejected(d) | StorageFailure(d)
            | Transport(d) | Malformed(d) | Internal(d) => d.clone(),
            _ => String::new(),
        }
    }
}

impl From<std::io::Error> for ProtocolError {
    fn from(e: std::io::Error) -> Self {
        ProtocolError::Transport(e.to_string())
    }
}

impl From<crate::codec::DecodeError> for ProtocolError {
    fn from(e: crate::codec::DecodeError) -> Self {
        ProtocolError::Malformed(e.to_string())
    }
}

impl From<CasError> for ProtocolError {
    fn from(e: CasError) -> Self {
        match e {
            CasError::NotFound => ProtocolError::NotFound,
            CasError::IntegrityViolation => ProtocolError::IntegrityViolation,
            CasError::MalformedLocator(_) => ProtocolError::IntegrityViolation,
            other => ProtocolError::StorageFailure(other.to_string()),
        }
    }
}

impl From<LedgerError> for ProtocolError {
    fn from(e: LedgerError) -> Self {
        match e {
            LedgerError::NotFound => ProtocolError::NotFound,
            LedgerError::Io(s) => ProtocolError::StorageFailure(s),
            other => ProtocolError::LedgerRejected(other.to_string()),
        }
    }
}

impl From<AbeError> for ProtocolError {
    fn from(e: AbeError) -> Self {
        match e {
            AbeError::PolicySyntax(p) => ProtocolError::PolicySyntax(p.to_string()),
            AbeError::EmptyContainer => ProtocolError::EmptyContainer,
            AbeError::DuplicateLabel(l) => ProtocolError::DuplicateLabel(l),
            AbeError::EmptyAttributeSet => ProtocolError::EmptyAttributeSet,
            AbeError::PolicyNotSatisfied => ProtocolError::PolicyNotSatisfied,
            AbeError::IntegrityFailure | AbeError::Malformed(_) => {
                ProtocolError::IntegrityViolation
            }
            AbeError::EntropyFailure => ProtocolError::Internal(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_codes_roundtrip() {
        let all = [
            ProtocolError::AuthFailure,
            ProtocolError::UnknownClient,
            ProtocolError::ReplayDetected,
            ProtocolError::Unauthenticated,
            ProtocolError::PolicySyntax("x".into()),
            ProtocolError::EmptyContainer,
            ProtocolError::DuplicateLabel("l".into()),
            ProtocolError::EmptyAttributeSet,
            ProtocolError::NotCertifier,
            ProtocolError::NotCertified,
            ProtocolError::IntegrityViolation,
            ProtocolError::NotFound,
            ProtocolError::PolicyNotSatisfied,
            ProtocolError::LedgerRejected("r".into()),
            ProtocolError::StorageFailure("s".into()),
            ProtocolError::Transport("t".into()),
            ProtocolError::Malformed("m".into()),
            ProtocolError::Internal("i".into()),
        ];
        for e in all {
            assert_eq!(ProtocolError::from_wire(e.code(), e.detail()), e);
            assert!((65..=75).contains(&e.class().exit_code()));
        }
    }
}
