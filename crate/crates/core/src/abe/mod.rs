//! Ciphertext-policy encryption of document slices.
//!
//! Each slice gets a fresh data key `d`, sampled as a field element and
//! distributed over the compiled access tree of its policy. Every leaf
//! share is sealed under the wrap key of the leaf's attribute, and the
//! payload is sealed under `KDF(d, "payload")` with the hash of the
//! ciphertext header as associated data. A user key is the set of wrap
//! keys for the holder's certified attributes.
//!
//! Wrap keys are derived deterministically from the authority's root key,
//! so two users holding disjoint attributes can pool their keys. Keys are
//! only ever released to authenticated holders over a sealed channel.

mod container;

use std::collections::BTreeMap;

use rand::{CryptoRng, RngCore};
use thiserror::Error;

pub use container::{
    decrypt_container, encrypt_container, CiphertextContainer, SliceCiphertext, SliceInput,
    WrappedShare, MESSAGE_ID_LEN,
};

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::crypto::{self, KEY_LEN};
use crate::ledger::Address;
use crate::policy::{AttributeId, AttributeSet, PolicyError};

const WRAP_LABEL: &[u8] = b"cake/attribute-wrap/v1/";
const PAYLOAD_LABEL: &[u8] = b"cake/payload/v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AbeError {
    #[error("policy: {0}")]
    PolicySyntax(#[from] PolicyError),
    #[error("entropy source failed")]
    EntropyFailure,
    #[error("attribute set is empty")]
    EmptyAttributeSet,
    #[error("attributes do not satisfy the slice policy")]
    PolicyNotSatisfied,
    #[error("ciphertext failed authentication")]
    IntegrityFailure,
    #[error("duplicate slice label {0:?}")]
    DuplicateLabel(String),
    #[error("container has no slices")]
    EmptyContainer,
    #[error("malformed encoding: {0}")]
    Malformed(#[from] DecodeError),
}

/// The authority's root secret, shared by the data and key managers.
#[derive(Clone, PartialEq, Eq)]
pub struct MasterSecret {
    root_key: [u8; KEY_LEN],
}

impl std::fmt::Debug for MasterSecret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("MasterSecret(..)")
    }
}

impl MasterSecret {
    pub fn from_bytes(root_key: [u8; KEY_LEN]) -> Self {
        Self { root_key }
    }

    /// Raw root key, for provisioning storage only.
    pub fn expose_bytes(&self) -> &[u8; KEY_LEN] {
        &self.root_key
    }

    /// Derives a purpose-specific 32-byte key from the root.
    pub(crate) fn derive(&self, info: &[u8]) -> [u8; KEY_LEN] {
        crypto::kdf(&self.root_key, info)
    }
}

pub fn setup<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Result<MasterSecret, AbeError> {
    let mut root_key = [0u8; KEY_LEN];
    rng.try_fill_bytes(&mut root_key)
        .map_err(|_| AbeError::EntropyFailure)?;
    Ok(MasterSecret { root_key })
}

/// `HKDF-SHA256(ikm = root, info = "cake/attribute-wrap/v1/" || name)`.
pub fn attribute_wrap_key(ms: &MasterSecret, attribute: &AttributeId) -> [u8; KEY_LEN] {
    let mut info = WRAP_LABEL.to_vec();
    info.extend_from_slice(attribute.as_str().as_bytes());
    ms.derive(&info)
}

fn payload_key(data_key: &[u8; 32]) -> [u8; KEY_LEN] {
    crypto::kdf(data_key, PAYLOAD_LABEL)
}

#[derive(Clone, PartialEq, Eq)]
pub struct UserKey {
    pub holder: Address,
    pub attribute_keys: BTreeMap<AttributeId, [u8; KEY_LEN]>,
    pub issued_at: u64,
}

impl std::fmt::Debug for UserKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UserKey")
            .field("holder", &self.holder)
            .field("attributes", &self.attributes())
            .field("issued_at", &self.issued_at)
            .finish()
    }
}

impl UserKey {
    pub fn attributes(&self) -> AttributeSet {
        self.attribute_keys.keys().cloned().collect()
    }

    /// Copy of this key with `attribute` removed.
    pub fn without(&self, attribute: &AttributeId) -> UserKey {
        let mut k = self.clone();
        k.attribute_keys.remove(attribute);
        k
    }

    pub fn encode(&self) -> Vec<u8> {
        let entries: Vec<_> = self.attribute_keys.iter().collect();
        let mut enc = Encoder::new();
        enc.field(self.holder.as_bytes())
            .list(&entries, |(a, k), e| {
                e.str(a.as_str()).field(&k[..]);
            })
            .u64(self.issued_at);
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let holder = Address::from_bytes(dec.fixed()?);
        let entries = dec.list(|d| {
            let name = d.string()?;
            let attr =
                AttributeId::new(&name).map_err(|e| DecodeError::Invalid(e.to_string()))?;
            Ok((attr, d.fixed::<KEY_LEN>()?))
        })?;
        let issued_at = dec.u64()?;
        dec.finish()?;
        let count = entries.len();
        let attribute_keys: BTreeMap<_, _> = entries.into_iter().collect();
        if attribute_keys.len() != count {
            return Err(DecodeError::Invalid("duplicate attribute in key".into()));
        }
        Ok(UserKey {
            holder,
            attribute_keys,
            issued_at,
        })
    }
}

pub fn keygen(
    ms: &MasterSecret,
    holder: Address,
    attrs: &AttributeSet,
    issued_at: u64,
) -> Result<UserKey, AbeError> {
    if attrs.is_empty() {
        return Err(AbeError::EmptyAttributeSet);
    }
    Ok(UserKey {
        holder,
        attribute_keys: attrs
            .iter()
            .map(|a| (a.clone(), attribute_wrap_key(ms, a)))
            .collect(),
        issued_at,
    })
}

pub use container::{decrypt_slice, encrypt_slice};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::attribute_set;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn setup_is_seed_deterministic() {
        let a = setup(&mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        let b = setup(&mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        let c = setup(&mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.expose_bytes().len(), 32);
    }

    #[test]
    fn wrap_keys_are_stable_and_distinct() {
        let ms = setup(&mut ChaCha20Rng::seed_from_u64(4)).unwrap();
        let attrs = attribute_set(["29837", "economic_operator", "courier", "customs"]).unwrap();
        let keys: Vec<_> = attrs.iter().map(|a| attribute_wrap_key(&ms, a)).collect();
        for (i, a) in attrs.iter().enumerate() {
            assert_eq!(attribute_wrap_key(&ms, a), keys[i]);
            for j in (i + 1)..keys.len() {
                assert_ne!(keys[i], keys[j]);
            }
        }
    }

    #[test]
    fn keygen_covers_exactly_the_given_attributes() {
        let ms = setup(&mut ChaCha20Rng::seed_from_u64(4)).unwrap();
        let holder = Address::from_bytes([1; 20]);
        let attrs = attribute_set(["courier", "29837"]).unwrap();
        let key = keygen(&ms, holder, &attrs, 10).unwrap();
        assert_eq!(key.attributes(), attrs);

        let single = keygen(&ms, holder, &attribute_set(["x"]).unwrap(), 0).unwrap();
        assert_eq!(single.attribute_keys.len(), 1);

        let other = keygen(&ms, Address::from_bytes([2; 20]), &attrs, 10).unwrap();
        assert_eq!(key.attribute_keys, other.attribute_keys);

        assert_eq!(
            keygen(&ms, holder, &AttributeSet::new(), 0),
            Err(AbeError::EmptyAttributeSet)
        );
    }

    #[test]
    fn user_key_encoding_roundtrips() {
        let ms = setup(&mut ChaCha20Rng::seed_from_u64(4)).unwrap();
        let key = keygen(
            &ms,
            Address::from_bytes([3; 20]),
            &attribute_set(["b", "a"]).unwrap(),
            77,
        )
        .unwrap();
        assert_eq!(UserKey::decode(&key.encode()).unwrap(), key);
        assert!(UserKey::decode(&key.encode()[1..]).is_err());
    }

    #[test]
    fn wrap_key_vectors() {
        // Python hmac/hashlib HKDF-SHA256, empty salt, info = label || name
        let cases: [([u8; 32], &str, &str); 3] = [
            (
                [0; 32],
                "courier",
                "07e0f7e5a5289fa1617b37125b060f3af8648300252b908aafc6ae6c7965d91e",
            ),
            (
                core::array::from_fn(|i| i as u8),
                "customs",
                "7a06b382b9f32fe47210de291e270a50f0a1695e9b7680c8d336ce7043038f7c",
            ),
            (
                [0xab; 32],
                "29837",
                "7593b25541ade7f8adaa7f9e6ca495dadd5cfaa74ce7e5a0c23b6235273ae8b5",
            ),
        ];
        for (root, name, expected) in cases {
            let ms = MasterSecret::from_bytes(root);
            let attr = AttributeId::new(name).unwrap();
            let key = attribute_wrap_key(&ms, &attr);
            assert_eq!(hex::encode(key), expected, "{name}");
            assert_eq!(key, rfc5869_from_hmac(&root, &[WRAP_LABEL, name.as_bytes()].concat()));
        }
    }

    /// HKDF built directly from HMAC-SHA256, one output block.
    fn rfc5869_from_hmac(ikm: &[u8], info: &[u8]) -> [u8; 32] {
        use hmac::{Hmac, Mac};
        type H = Hmac<sha2::Sha256>;
        let mut ext = H::new_from_slice(&[0u8; 32]).unwrap();
        ext.update(ikm);
        let prk = ext.finalize().into_bytes();
        let mut exp = H::new_from_slice(&prk).unwrap();
        exp.update(info);
        exp.update(&[1]);
        exp.finalize().into_bytes().into()
    }
}
