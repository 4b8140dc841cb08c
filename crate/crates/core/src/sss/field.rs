use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;

use num_bigint::BigUint;
use rand::{CryptoRng, RngCore};

/// The field modulus `2^255 - 19`.
pub fn modulus() -> &'static BigUint {
    static P: OnceLock<BigUint> = OnceLock::new();
    P.get_or_init(|| (BigUint::from(1u8) << 255u32) - BigUint::from(19u8))
}

/// An element of GF(2^255 - 19), always fully reduced.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct FieldElement(BigUint);

impl FieldElement {
    pub fn zero() -> Self {
        Self(BigUint::default())
    }

    pub fn one() -> Self {
        Self(BigUint::from(1u8))
    }

    pub fn from_u64(v: u64) -> Self {
        Self(BigUint::from(v) % modulus())
    }

    /// Reduces an arbitrary integer into the field.
    pub fn from_biguint(v: BigUint) -> Self {
        Self(v % modulus())
    }

    /// Decodes the canonical 32-byte little-endian form, rejecting values
    /// that are not fully reduced.
    pub fn from_bytes(bytes: &[u8; 32]) -> Option<Self> {
        let v = BigUint::from_bytes_le(bytes);
        (&v < modulus()).then_some(Self(v))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        let le = self.0.to_bytes_le();
        out[..le.len()].copy_from_slice(&le);
        out
    }

    /// Uniform sample in `[0, p)` by rejection over 255-bit strings.
    pub fn random<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let mut buf = [0u8; 32];
            rng.fill_bytes(&mut buf);
            buf[31] &= 0x7f;
            if let Some(fe) = Self::from_bytes(&buf) {
                return fe;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0 == BigUint::default()
    }

    pub fn as_biguint(&self) -> &BigUint {
        &self.0
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn invert(&self) -> Option<Self> {
        if self.is_zero() {
            return None;
        }
        let p = modulus();
        Some(Self(self.0.modpow(&(p - BigUint::from(2u8)), p)))
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FieldElement(0x{})", self.0.to_str_radix(16))
    }
}

impl Add for &FieldElement {
    type Output = FieldElement;
    fn add(self, rhs: &FieldElement) -> FieldElement {
        FieldElement((&self.0 + &rhs.0) % modulus())
    }
}

impl Sub for &FieldElement {
    type Output = FieldElement;
    fn sub(self, rhs: &FieldElement) -> FieldElement {
        let p = modulus();
        FieldElement((&self.0 + p - &rhs.0) % p)
    }
}

impl Mul for &FieldElement {
    type Output = FieldElement;
    fn mul(self, rhs: &FieldElement) -> FieldElement {
        FieldElement((&self.0 * &rhs.0) % modulus())
    }
}

impl Neg for &FieldElement {
    type Output = FieldElement;
    fn neg(self) -> FieldElement {
        &FieldElement::zero() - self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn modulus_bytes() {
        let mut expected = [0xffu8; 32];
        expected[0] = 0xed;
        expected[31] = 0x7f;
        assert_eq!(modulus().to_bytes_le(), expected.to_vec());
    }

    #[test]
    fn serialization_rejects_unreduced() {
        let p_bytes: [u8; 32] = modulus().to_bytes_le().try_into().unwrap();
        assert!(FieldElement::from_bytes(&p_bytes).is_none());
        let mut below = p_bytes;
        below[0] -= 1;
        let fe = FieldElement::from_bytes(&below).unwrap();
        assert_eq!(fe.to_bytes(), below);
        assert_eq!(&fe + &FieldElement::one(), FieldElement::zero());
    }

    #[test]
    fn inverse_and_negation() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..16 {
            let a = FieldElement::random(&mut rng);
            if a.is_zero() {
                continue;
            }
            assert_eq!(&a * &a.invert().unwrap(), FieldElement::one());
            assert_eq!(&a + &(-&a), FieldElement::zero());
        }
        assert!(FieldElement::zero().invert().is_none());
    }
}
