//! Shamir threshold sharing over GF(2^255 - 19) and its recursive
//! extension over access trees.
//!
//! A gate with threshold `t` and `n` children splits its value into `n`
//! shares of a degree `t - 1` polynomial. Child `j` (1-based) receives the
//! evaluation at `x = j`. Leaves end up with one field element each, keyed
//! by leaf index.

mod field;

use std::collections::{BTreeMap, BTreeSet};

use rand::{CryptoRng, RngCore};
use thiserror::Error;

pub use field::{modulus, FieldElement};

use crate::policy::AccessTree;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShareError {
    #[error("invalid threshold {t} for {n} shares")]
    InvalidThreshold { t: usize, n: usize },
    #[error("duplicate share index {0}")]
    DuplicateIndex(u32),
    #[error("share index must be non-zero")]
    ZeroIndex,
    #[error("no shares supplied")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Share {
    pub index: u32,
    pub value: FieldElement,
}

pub type LeafShareMap = BTreeMap<u32, FieldElement>;

/// Evaluates the polynomial with the given coefficients (constant first).
fn eval_poly(coefficients: &[FieldElement], x: u32) -> FieldElement {
    let x = FieldElement::from_u64(u64::from(x));
    coefficients
        .iter()
        .rev()
        .fold(FieldElement::zero(), |acc, c| &(&acc * &x) + c)
}

/// Splits `secret` into `n` shares at points `1..=n`, any `t` of which
/// reconstruct it.
pub fn share<R: RngCore + CryptoRng + ?Sized>(
    secret: &FieldElement,
    t: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Share>, ShareError> {
    if t < 1 || t > n || u32::try_from(n).is_err() {
        return Err(ShareError::InvalidThreshold { t, n });
    }
    let mut coefficients = Vec::with_capacity(t);
    coefficients.push(secret.clone());
    for _ in 1..t {
        coefficients.push(FieldElement::random(rng));
    }
    Ok((1..=n as u32)
        .map(|x| Share {
            index: x,
            value: eval_poly(&coefficients, x),
        })
        .collect())
}

/// Lagrange coefficients at zero for the given distinct non-zero points.
fn lagrange_at_zero(points: &[u32]) -> Vec<FieldElement> {
    let xs: Vec<FieldElement> = points
        .iter()
        .map(|&x| FieldElement::from_u64(u64::from(x)))
        .collect();
    xs.iter()
        .enumerate()
        .map(|(i, xi)| {
            let mut num = FieldElement::one();
            let mut den = FieldElement::one();
            for (j, xj) in xs.iter().enumerate() {
                if i != j {
                    num = &num * xj;
                    den = &den * &(xj - xi);
                }
            }
            &num * &den.invert().expect("points are distinct")
        })
        .collect()
}

/// Interpolates the shares' polynomial at zero.
pub fn reconstruct(shares: &[Share]) -> Result<FieldElement, ShareError> {
    if shares.is_empty() {
        return Err(ShareError::Empty);
    }
    let mut seen = BTreeSet::new();
    for s in shares {
        if s.index == 0 {
            return Err(ShareError::ZeroIndex);
        }
        if !seen.insert(s.index) {
            return Err(ShareError::DuplicateIndex(s.index));
        }
    }
    let points: Vec<u32> = shares.iter().map(|s| s.index).collect();
    Ok(lagrange_at_zero(&points)
        .iter()
        .zip(shares)
        .fold(FieldElement::zero(), |acc, (l, s)| &acc + &(l * &s.value)))
}

/// Distributes `secret` down the tree.
pub fn share_tree<R: RngCore + CryptoRng + ?Sized>(
    tree: &AccessTree,
    secret: &FieldElement,
    rng: &mut R,
) -> LeafShareMap {
    fn go<R: RngCore + CryptoRng + ?Sized>(
        tree: &AccessTree,
        value: FieldElement,
        rng: &mut R,
        out: &mut LeafShareMap,
    ) {
        match tree {
            AccessTree::Leaf { index, .. } => {
                out.insert(*index, value);
            }
            AccessTree::Gate {
                threshold,
                children,
            } => {
                let shares = share(&value, *threshold, children.len(), rng)
                    .expect("access tree gate thresholds are within bounds");
                for (child, s) in children.iter().zip(shares) {
                    go(child, s.value, rng, out);
                }
            }
        }
    }
    let mut out = LeafShareMap::new();
    go(tree, secret.clone(), rng, &mut out);
    out
}

/// Recovers the root value from whichever leaf shares are available, or
/// `None` when the available leaves do not satisfy the tree. At each gate
/// the lowest-positioned recoverable children are used.
pub fn reconstruct_tree(tree: &AccessTree, available: &LeafShareMap) -> Option<FieldElement> {
    match tree {
        AccessTree::Leaf { index, .. } => available.get(index).cloned(),
        AccessTree::Gate {
            threshold,
            children,
        } => {
            let mut recovered = Vec::with_capacity(*threshold);
            for (pos, child) in children.iter().enumerate() {
                if recovered.len() == *threshold {
                    break;
                }
                if let Some(value) = reconstruct_tree(child, available) {
                    recovered.push(Share {
                        index: pos as u32 + 1,
                        value,
                    });
                }
            }
            if recovered.len() < *threshold {
                return None;
            }
            reconstruct(&recovered).ok()
        }
    }
}
