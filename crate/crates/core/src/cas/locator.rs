use std::fmt;
use std::str::FromStr;

use super::CasError;
use crate::crypto::{sha256, Digest32};

/// Multihash prefix for a 32-byte SHA2-256 digest.
const MULTIHASH_PREFIX: [u8; 2] = [0x12, 0x20];

/// Content address of a blob: the SHA-256 of its bytes, rendered as
/// base58btc over `0x12 0x20 || digest` (always starts with `Qm`).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Locator {
    digest: Digest32,
}

impl Locator {
    pub fn from_digest(digest: Digest32) -> Self {
        Self { digest }
    }

    pub fn for_bytes(bytes: &[u8]) -> Self {
        Self::from_digest(sha256(bytes))
    }

    pub fn digest(&self) -> &Digest32 {
        &self.digest
    }

    pub fn hex_digest(&self) -> String {
        hex::encode(self.digest)
    }
}

pub fn render_locator(loc: &Locator) -> String {
    let mut raw = Vec::with_capacity(34);
    raw.extend_from_slice(&MULTIHASH_PREFIX);
    raw.extend_from_slice(&loc.digest);
    bs58::encode(raw).into_string()
}

pub fn parse_locator(text: &str) -> Result<Locator, CasError> {
    let raw = bs58::decode(text)
        .into_vec()
        .map_err(|e| CasError::MalformedLocator(e.to_string()))?;
    if raw.len() != 34 {
        return Err(CasError::MalformedLocator(format!(
            "expected 34 decoded bytes, got {}",
            raw.len()
        )));
    }
    if raw[..2] != MULTIHASH_PREFIX {
        return Err(CasError::MalformedLocator("not a sha2-256 multihash".into()));
    }
    let mut digest = [0u8; 32];
    digest.copy_from_slice(&raw[2..]);
    Ok(Locator { digest })
}

impl fmt::Display for Locator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_locator(self))
    }
}

impl fmt::Debug for Locator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Locator({self})")
    }
}

impl FromStr for Locator {
    type Err = CasError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_locator(s)
    }
}
