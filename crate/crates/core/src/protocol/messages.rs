//! Message bodies. Every message is a one-byte type tag followed by its
//! canonical encoding. Handshake messages travel in plaintext frames; all
//! others are sealed under the session key.

use crate::abe::{SliceInput, UserKey, MESSAGE_ID_LEN};
use crate::cas::Locator;
use crate::codec::{DecodeError, Decoder, Encoder};
use crate::ledger::Address;
use crate::policy::{AttributeId, AttributeSet};

pub const TAG_CLIENT_HELLO: u8 = 0x01;
pub const TAG_SERVER_CHALLENGE: u8 = 0x02;
pub const TAG_CLIENT_AUTH: u8 = 0x03;
pub const TAG_HANDSHAKE_REJECT: u8 = 0x04;
const TAG_READY: u8 = 0x05;
const TAG_STORE: u8 = 0x10;
const TAG_STORED: u8 = 0x11;
const TAG_CERTIFY: u8 = 0x20;
const TAG_CERTIFY_PREPARED: u8 = 0x21;
const TAG_CERTIFY_SIGNATURE: u8 = 0x22;
const TAG_CERTIFIED: u8 = 0x23;
const TAG_KEY_REQUEST: u8 = 0x30;
const TAG_KEY: u8 = 0x31;
pub const TAG_ERROR: u8 = 0x7f;

fn split_tag(bytes: &[u8]) -> Result<(u8, &[u8]), DecodeError> {
    bytes
        .split_first()
        .map(|(t, rest)| (*t, rest))
        .ok_or(DecodeError::Truncated(0))
}

fn tagged(tag: u8, enc: Encoder) -> Vec<u8> {
    let body = enc.finish();
    let mut out = Vec::with_capacity(1 + body.len());
    out.push(tag);
    out.extend_from_slice(&body);
    out
}

fn expect_tag(bytes: &[u8], tag: u8) -> Result<Decoder<'_>, DecodeError> {
    let (t, rest) = split_tag(bytes)?;
    if t != tag {
        return Err(DecodeError::Invalid(format!("unexpected message type {t:#04x}")));
    }
    Ok(Decoder::new(rest))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientHello {
    pub address: Address,
    pub ephemeral: [u8; 32],
    pub nonce: [u8; 32],
}

impl ClientHello {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.field(self.address.as_bytes())
            .field(&self.ephemeral)
            .field(&self.nonce);
        tagged(TAG_CLIENT_HELLO, enc)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = expect_tag(bytes, TAG_CLIENT_HELLO)?;
        let hello = Self {
            address: Address::from_bytes(dec.fixed()?),
            ephemeral: dec.fixed()?,
            nonce: dec.fixed()?,
        };
        dec.finish()?;
        Ok(hello)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerChallenge {
    pub ephemeral: [u8; 32],
    pub nonce: [u8; 32],
    pub signature: [u8; 64],
}

impl ServerChallenge {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.field(&self.ephemeral)
            .field(&self.nonce)
            .field(&self.signature);
        tagged(TAG_SERVER_CHALLENGE, enc)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = expect_tag(bytes, TAG_SERVER_CHALLENGE)?;
        let ch = Self {
            ephemeral: dec.fixed()?,
            nonce: dec.fixed()?,
            signature: dec.fixed()?,
        };
        dec.finish()?;
        Ok(ch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientAuth {
    pub signature: [u8; 64],
}

impl ClientAuth {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.field(&self.signature);
        tagged(TAG_CLIENT_AUTH, enc)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = expect_tag(bytes, TAG_CLIENT_AUTH)?;
        let auth = Self {
            signature: dec.fixed()?,
        };
        dec.finish()?;
        Ok(auth)
    }
}

pub(crate) fn encode_reject(code: u16, detail: &str) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.u32(code as u32).str(detail);
    tagged(TAG_HANDSHAKE_REJECT, enc)
}

/// `Some((code, detail))` if `bytes` is a handshake rejection.
pub(crate) fn decode_reject(bytes: &[u8]) -> Option<(u16, String)> {
    let mut dec = expect_tag(bytes, TAG_HANDSHAKE_REJECT).ok()?;
    let code = dec.u32().ok()?;
    let detail = dec.string().ok()?;
    dec.finish().ok()?;
    Some((code as u16, detail))
}

fn encode_attributes(attrs: &AttributeSet, enc: &mut Encoder) {
    let list: Vec<&AttributeId> = attrs.iter().collect();
    enc.list(&list, |a, e| {
        e.str(a.as_str());
    });
}

fn decode_attributes(dec: &mut Decoder<'_>) -> Result<AttributeSet, DecodeError> {
    let list = dec.list(|d| {
        AttributeId::new(&d.string()?).map_err(|e| DecodeError::Invalid(e.to_string()))
    })?;
    Ok(list.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Store { slices: Vec<SliceInput> },
    Certify { actor: Address, attributes: AttributeSet },
    CertifySignature { signature: [u8; 64] },
    KeyRequest,
}

impl Request {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        let tag = match self {
            Request::Store { slices } => {
                enc.list(slices, |s, e| {
                    e.str(&s.label).str(&s.policy).field(&s.data);
                });
                TAG_STORE
            }
            Request::Certify { actor, attributes } => {
                enc.field(actor.as_bytes());
                encode_attributes(attributes, &mut enc);
                TAG_CERTIFY
            }
            Request::CertifySignature { signature } => {
                enc.field(signature);
                TAG_CERTIFY_SIGNATURE
            }
            Request::KeyRequest => TAG_KEY_REQUEST,
        };
        tagged(tag, enc)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let (tag, rest) = split_tag(bytes)?;
        let mut dec = Decoder::new(rest);
        let req = match tag {
            TAG_STORE => Request::Store {
                slices: dec.list(|d| {
                    Ok(SliceInput::new(d.string()?, d.string()?, d.field()?))
                })?,
            },
            TAG_CERTIFY => Request::Certify {
                actor: Address::from_bytes(dec.fixed()?),
                attributes: decode_attributes(&mut dec)?,
            },
            TAG_CERTIFY_SIGNATURE => Request::CertifySignature {
                signature: dec.fixed()?,
            },
            TAG_KEY_REQUEST => Request::KeyRequest,
            t => return Err(DecodeError::Invalid(format!("unknown request type {t:#04x}"))),
        };
        dec.finish()?;
        Ok(req)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    /// Sent once after a successful handshake.
    Ready,
    Stored {
        message_id: [u8; MESSAGE_ID_LEN],
        locator: Locator,
    },
    /// Metadata blob and the unsigned certify transaction for the
    /// certifier to check and sign.
    CertifyPrepared { metadata: Vec<u8>, tx_body: Vec<u8> },
    Certified { locator: Locator },
    Key { key: UserKey },
    Error { code: u16, detail: String },
}

impl Response {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        let tag = match self {
            Response::Ready => TAG_READY,
            Response::Stored {
                message_id,
                locator,
            } => {
                enc.field(message_id).field(locator.digest());
                TAG_STORED
            }
            Response::CertifyPrepared { metadata, tx_body } => {
                enc.field(metadata).field(tx_body);
                TAG_CERTIFY_PREPARED
            }
            Response::Certified { locator } => {
                enc.field(locator.digest());
                TAG_CERTIFIED
            }
            Response::Key { key } => {
                enc.field(&key.encode());
                TAG_KEY
            }
            Response::Error { code, detail } => {
                enc.u32(*code as u32).str(detail);
                TAG_ERROR
            }
        };
        tagged(tag, enc)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let (tag, rest) = split_tag(bytes)?;
        let mut dec = Decoder::new(rest);
        let resp = match tag {
            TAG_READY => Response::Ready,
            TAG_STORED => Response::Stored {
                message_id: dec.fixed()?,
                locator: Locator::from_digest(dec.fixed()?),
            },
            TAG_CERTIFY_PREPARED => Response::CertifyPrepared {
                metadata: dec.field()?.to_vec(),
                tx_body: dec.field()?.to_vec(),
            },
            TAG_CERTIFIED => Response::Certified {
                locator: Locator::from_digest(dec.fixed()?),
            },
            TAG_KEY => Response::Key {
                key: UserKey::decode(dec.field()?)?,
            },
            TAG_ERROR => {
                let code = dec.u32()?;
                let code = u16::try_from(code)
                    .map_err(|_| DecodeError::Invalid("error code out of range".into()))?;
                Response::Error {
                    code,
                    detail: dec.string()?,
                }
            }
            t => return Err(DecodeError::Invalid(format!("unknown response type {t:#04x}"))),
        };
        dec.finish()?;
        Ok(resp)
    }
}
