use std::collections::BTreeSet;

use rand::{CryptoRng, RngCore};

use super::{attribute_wrap_key, payload_key, AbeError, MasterSecret, UserKey};
use crate::codec::{DecodeError, Decoder, Encoder};
use crate::crypto::{self, NONCE_LEN, TAG_LEN};
use crate::policy::{compile, parse_policy, render_policy, AttributeId};
use crate::sss::{reconstruct_tree, share_tree, FieldElement, LeafShareMap};

pub const MESSAGE_ID_LEN: usize = 16;
const WRAPPED_SHARE_LEN: usize = 32 + TAG_LEN;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrappedShare {
    pub leaf_index: u32,
    pub attribute: AttributeId,
    pub nonce: [u8; NONCE_LEN],
    pub wrapped: Vec<u8>,
}

impl WrappedShare {
    fn aad(leaf_index: u32, attribute: &AttributeId) -> Vec<u8> {
        let mut aad = leaf_index.to_be_bytes().to_vec();
        aad.extend_from_slice(attribute.as_str().as_bytes());
        aad
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceCiphertext {
    pub policy_text: String,
    pub wrapped_shares: Vec<WrappedShare>,
    pub payload_nonce: [u8; NONCE_LEN],
    pub payload: Vec<u8>,
}

impl SliceCiphertext {
    fn encode_with(&self, payload_nonce: &[u8], payload: &[u8], enc: &mut Encoder) {
        enc.str(&self.policy_text)
            .list(&self.wrapped_shares, |w, e| {
                e.u32(w.leaf_index)
                    .str(w.attribute.as_str())
                    .field(&w.nonce)
                    .field(&w.wrapped);
            })
            .field(payload_nonce)
            .field(payload);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_with(&self.payload_nonce, &self.payload, &mut enc);
        enc.finish()
    }

    /// Digest of the canonical form with the payload nonce and payload
    /// replaced by zero bytes of the same length.
    pub fn header_hash(&self) -> [u8; 32] {
        header_hash_for(self, self.payload.len())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let ct = Self::decode_from(&mut dec)?;
        dec.finish()?;
        Ok(ct)
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let policy_text = dec.string()?;
        let wrapped_shares = dec.list(|d| {
            let leaf_index = d.u32()?;
            let name = d.string()?;
            let attribute =
                AttributeId::new(&name).map_err(|e| DecodeError::Invalid(e.to_string()))?;
            let nonce = d.fixed()?;
            let wrapped = d.field()?.to_vec();
            Ok(WrappedShare {
                leaf_index,
                attribute,
                nonce,
                wrapped,
            })
        })?;
        let payload_nonce = dec.fixed()?;
        let payload = dec.field()?.to_vec();
        Ok(SliceCiphertext {
            policy_text,
            wrapped_shares,
            payload_nonce,
            payload,
        })
    }
}

fn header_hash_for(ct: &SliceCiphertext, payload_len: usize) -> [u8; 32] {
    let mut enc = Encoder::new();
    ct.encode_with(&[0u8; NONCE_LEN], &vec![0u8; payload_len], &mut enc);
    crypto::sha256(&enc.finish())
}

fn fill<R: RngCore + CryptoRng + ?Sized>(rng: &mut R, buf: &mut [u8]) -> Result<(), AbeError> {
    rng.try_fill_bytes(buf).map_err(|_| AbeError::EntropyFailure)
}

fn sample_data_key<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Result<FieldElement, AbeError> {
    loop {
        let mut buf = [0u8; 32];
        fill(rng, &mut buf)?;
        buf[31] &= 0x7f;
        if let Some(fe) = FieldElement::from_bytes(&buf) {
            return Ok(fe);
        }
    }
}

pub fn encrypt_slice<R: RngCore + CryptoRng + ?Sized>(
    ms: &MasterSecret,
    policy: &str,
    plaintext: &[u8],
    rng: &mut R,
) -> Result<SliceCiphertext, AbeError> {
    let ast = parse_policy(policy)?;
    let tree = compile(&ast);
    let data_key = sample_data_key(rng)?;
    let leaf_shares = share_tree(&tree, &data_key, rng);

    let mut wrapped_shares = Vec::with_capacity(leaf_shares.len());
    for (leaf_index, attribute) in tree.leaves() {
        let mut nonce = [0u8; NONCE_LEN];
        fill(rng, &mut nonce)?;
        let key = attribute_wrap_key(ms, attribute);
        let share = leaf_shares[&leaf_index].to_bytes();
        let wrapped = crypto::seal(
            &key,
            &nonce,
            &WrappedShare::aad(leaf_index, attribute),
            &share,
        );
        wrapped_shares.push(WrappedShare {
            leaf_index,
            attribute: attribute.clone(),
            nonce,
            wrapped,
        });
    }

    let mut ct = SliceCiphertext {
        policy_text: render_policy(&ast),
        wrapped_shares,
        payload_nonce: [0u8; NONCE_LEN],
        payload: Vec::new(),
    };
    let aad = header_hash_for(&ct, plaintext.len() + TAG_LEN);
    fill(rng, &mut ct.payload_nonce)?;
    ct.payload = crypto::seal(
        &payload_key(&data_key.to_bytes()),
        &ct.payload_nonce,
        &aad,
        plaintext,
    );
    Ok(ct)
}

pub fn decrypt_slice(uk: &UserKey, ct: &SliceCiphertext) -> Result<Vec<u8>, AbeError> {
    // The header must be canonical and describe exactly the compiled tree.
    let ast = parse_policy(&ct.policy_text).map_err(|_| AbeError::IntegrityFailure)?;
    if render_policy(&ast) != ct.policy_text {
        return Err(AbeError::IntegrityFailure);
    }
    let tree = compile(&ast);
    let leaves = tree.leaves();
    if leaves.len() != ct.wrapped_shares.len()
        || leaves
            .iter()
            .zip(&ct.wrapped_shares)
            .any(|((i, a), w)| *i != w.leaf_index || *a != &w.attribute)
    {
        return Err(AbeError::IntegrityFailure);
    }

    let mut available = LeafShareMap::new();
    let mut unwrap_failed = false;
    for w in &ct.wrapped_shares {
        let Some(key) = uk.attribute_keys.get(&w.attribute) else {
            continue;
        };
        let opened = if w.wrapped.len() == WRAPPED_SHARE_LEN {
            crypto::open(
                key,
                &w.nonce,
                &WrappedShare::aad(w.leaf_index, &w.attribute),
                &w.wrapped,
            )
        } else {
            None
        };
        match opened
            .and_then(|b| <[u8; 32]>::try_from(b.as_slice()).ok())
            .and_then(|b| FieldElement::from_bytes(&b))
        {
            Some(share) => {
                available.insert(w.leaf_index, share);
            }
            None => unwrap_failed = true,
        }
    }

    let data_key = match reconstruct_tree(&tree, &available) {
        Some(d) => d,
        // A held attribute whose share will not open is tampering, not a
        // missing attribute.
        None if unwrap_failed => return Err(AbeError::IntegrityFailure),
        None => return Err(AbeError::PolicyNotSatisfied),
    };
    if ct.payload.len() < TAG_LEN {
        return Err(AbeError::IntegrityFailure);
    }
    crypto::open(
        &payload_key(&data_key.to_bytes()),
        &ct.payload_nonce,
        &ct.header_hash(),
        &ct.payload,
    )
    .ok_or(AbeError::IntegrityFailure)
}

/// One slice of a submission: a label, its policy text, and the bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceInput {
    pub label: String,
    pub policy: String,
    pub data: Vec<u8>,
}

impl SliceInput {
    pub fn new(label: impl Into<String>, policy: impl Into<String>, data: impl Into<Vec<u8>>) -> Self {
        Self {
            label: label.into(),
            policy: policy.into(),
            data: data.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CiphertextContainer {
    pub message_id: [u8; MESSAGE_ID_LEN],
    pub slices: Vec<(String, SliceCiphertext)>,
}

impl CiphertextContainer {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.field(&self.message_id).list(&self.slices, |(label, ct), e| {
            e.str(label);
            ct.encode_with(&ct.payload_nonce, &ct.payload, e);
        });
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, AbeError> {
        let mut dec = Decoder::new(bytes);
        let message_id = dec.fixed()?;
        let slices = dec.list(|d| {
            let label = d.string()?;
            Ok((label, SliceCiphertext::decode_from(d)?))
        })?;
        dec.finish()?;
        check_labels(slices.iter().map(|(l, _)| l.as_str()))?;
        Ok(Self { message_id, slices })
    }

    pub fn slice(&self, label: &str) -> Option<&SliceCiphertext> {
        self.slices.iter().find(|(l, _)| l == label).map(|(_, c)| c)
    }
}

fn check_labels<'a>(labels: impl Iterator<Item = &'a str>) -> Result<(), AbeError> {
    let mut seen = BTreeSet::new();
    for label in labels {
        if !seen.insert(label) {
            return Err(AbeError::DuplicateLabel(label.to_string()));
        }
    }
    if seen.is_empty() {
        return Err(AbeError::EmptyContainer);
    }
    Ok(())
}

pub fn encrypt_container<R: RngCore + CryptoRng + ?Sized>(
    ms: &MasterSecret,
    message_id: [u8; MESSAGE_ID_LEN],
    slices: &[SliceInput],
    rng: &mut R,
) -> Result<CiphertextContainer, AbeError> {
    check_labels(slices.iter().map(|s| s.label.as_str()))?;
    let slices = slices
        .iter()
        .map(|s| Ok((s.label.clone(), encrypt_slice(ms, &s.policy, &s.data, rng)?)))
        .collect::<Result<Vec<_>, AbeError>>()?;
    Ok(CiphertextContainer { message_id, slices })
}

/// Decrypts every slice independently. Unreadable slices are a normal
/// outcome and come back as their per-slice error.
pub fn decrypt_container(
    uk: &UserKey,
    container: &CiphertextContainer,
) -> Vec<(String, Result<Vec<u8>, AbeError>)> {
    container
        .slices
        .iter()
        .map(|(label, ct)| (label.clone(), decrypt_slice(uk, ct)))
        .collect()
}
