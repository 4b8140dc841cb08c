//! Fixtures shared by the criterion benches under `benches/`.

use cake_core::abe::{attribute_wrap_key, MasterSecret, UserKey};
use cake_core::ledger::Address;
use cake_core::policy::{attribute_set, AttributeSet};

/// `a0 and (a1 or a2) and (a3 or a4) ...` over `width` attributes.
pub fn layered_policy(width: usize) -> String {
    assert!(width >= 1);
    let mut parts = vec!["a0".to_string()];
    let mut i = 1;
    while i < width {
        if i + 1 < width {
            parts.push(format!("(a{} or a{})", i, i + 1));
            i += 2;
        } else {
            parts.push(format!("a{i}"));
            i += 1;
        }
    }
    parts.join(" and ")
}

/// Attributes `a0..a{width}` that satisfy [`layered_policy`].
pub fn satisfying_attributes(width: usize) -> AttributeSet {
    attribute_set((0..width).map(|i| format!("a{i}"))).expect("valid names")
}

/// A key over `attrs` without going through the key manager.
pub fn direct_key(ms: &MasterSecret, attrs: &AttributeSet) -> UserKey {
    UserKey {
        holder: Address::from_bytes([0; 20]),
        attribute_keys: attrs.iter().map(|a| (a.clone(), attribute_wrap_key(ms, a))).collect(),
        issued_at: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cake_core::policy::{evaluate, parse_policy};

    #[test]
    fn fixtures_satisfy_their_policies() {
        for w in 1..=12 {
            let ast = parse_policy(&layered_policy(w)).unwrap();
            assert!(evaluate(&ast, &satisfying_attributes(w)), "width {w}");
        }
    }
}
