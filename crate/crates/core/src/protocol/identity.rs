use std::collections::HashMap;
use std::sync::RwLock;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use x25519_dalek::{PublicKey as DhPublic, StaticSecret};

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::ledger::Address;
use crate::policy::{AttributeId, AttributeSet};

/// An actor's long-term keys: ed25519 for signatures, X25519 for key
/// agreement.
#[derive(Clone)]
pub struct Identity {
    signing: SigningKey,
    static_secret: StaticSecret,
    address: Address,
}

impl std::fmt::Debug for Identity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Identity({})", self.address)
    }
}

impl Identity {
    pub fn generate<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
        let mut sign = [0u8; 32];
        let mut dh = [0u8; 32];
        rng.fill_bytes(&mut sign);
        rng.fill_bytes(&mut dh);
        Self::from_secret_bytes(sign, dh)
    }

    pub fn from_secret_bytes(signing: [u8; 32], static_dh: [u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(&signing);
        let address = Address::from_public_key(&signing.verifying_key());
        Self {
            signing,
            static_secret: StaticSecret::from(static_dh),
            address,
        }
    }

    /// `(signing seed, static key-agreement secret)` for key storage.
    pub fn secret_bytes(&self) -> ([u8; 32], [u8; 32]) {
        (self.signing.to_bytes(), self.static_secret.to_bytes())
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn signing_key(&self) -> &SigningKey {
        &self.signing
    }

    pub fn sign(&self, message: &[u8]) -> [u8; 64] {
        self.signing.sign(message).to_bytes()
    }

    pub(crate) fn static_secret(&self) -> &StaticSecret {
        &self.static_secret
    }

    pub fn public(&self) -> PublicIdentity {
        PublicIdentity {
            address: self.address,
            signing_key: self.signing.verifying_key(),
            static_key: DhPublic::from(&self.static_secret),
        }
    }
}

/// What a client must know about a server before connecting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublicIdentity {
    pub address: Address,
    pub signing_key: VerifyingKey,
    pub static_key: DhPublic,
}

impl PublicIdentity {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.field(self.signing_key.as_bytes())
            .field(self.static_key.as_bytes());
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let signing_key = VerifyingKey::from_bytes(&dec.fixed()?)
            .map_err(|e| DecodeError::Invalid(e.to_string()))?;
        let static_key = DhPublic::from(dec.fixed::<32>()?);
        dec.finish()?;
        Ok(Self {
            address: Address::from_public_key(&signing_key),
            signing_key,
            static_key,
        })
    }
}

/// Address to signing-key registry consulted by servers during the
/// handshake.
#[derive(Debug, Default)]
pub struct KeyDirectory {
    keys: RwLock<HashMap<Address, VerifyingKey>>,
}

impl KeyDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, key: VerifyingKey) -> Address {
        let address = Address::from_public_key(&key);
        self.keys.write().unwrap().insert(address, key);
        address
    }

    pub fn resolve(&self, address: &Address) -> Option<VerifyingKey> {
        self.keys.read().unwrap().get(address).copied()
    }
}

/// The record the user directory writes to the content store for each
/// certified actor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActorMetadata {
    pub actor: Address,
    pub attributes: AttributeSet,
    pub certified_at: u64,
    pub certifier: Address,
}

impl ActorMetadata {
    pub fn encode(&self) -> Vec<u8> {
        let attrs: Vec<&AttributeId> = self.attributes.iter().collect();
        let mut enc = Encoder::new();
        enc.field(self.actor.as_bytes())
            .list(&attrs, |a, e| {
                e.str(a.as_str());
            })
            .u64(self.certified_at)
            .field(self.certifier.as_bytes());
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let actor = Address::from_bytes(dec.fixed()?);
        let list = dec.list(|d| {
            let s = d.string()?;
            AttributeId::new(&s).map_err(|e| DecodeError::Invalid(e.to_string()))
        })?;
        let certified_at = dec.u64()?;
        let certifier = Address::from_bytes(dec.fixed()?);
        dec.finish()?;
        let count = list.len();
        let attributes: AttributeSet = list.into_iter().collect();
        // canonical form lists each attribute once, sorted
        if attributes.len() != count {
            return Err(DecodeError::Invalid("duplicate attribute".into()));
        }
        Ok(Self {
            actor,
            attributes,
            certified_at,
            certifier,
        })
    }
}
