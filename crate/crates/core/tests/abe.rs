use std::collections::{BTreeMap, BTreeSet};

use cake_core::abe::{self, decrypt_slice, encrypt_slice, AbeError, SliceCiphertext, UserKey};
use cake_core::ledger::Address;
use cake_core::policy::{
    compile, evaluate, parse_policy, random_policy, render_policy, AttributeId, AttributeSet,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn universe() -> Vec<AttributeId> {
    ["a", "b", "c", "d", "e", "f"]
        .iter()
        .map(|n| AttributeId::new(n).unwrap())
        .collect()
}

fn subset(universe: &[AttributeId], mask: u32) -> AttributeSet {
    universe
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, a)| a.clone())
        .collect()
}

/// Key for any attribute set, including the empty one keygen refuses.
fn key_for(ms: &abe::MasterSecret, attrs: &AttributeSet) -> UserKey {
    UserKey {
        holder: Address::from_bytes([7; 20]),
        attribute_keys: attrs
            .iter()
            .map(|a| (a.clone(), abe::attribute_wrap_key(ms, a)))
            .collect(),
        issued_at: 0,
    }
}

#[test]
fn decryption_succeeds_iff_attributes_satisfy_policy() {
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let ms = abe::setup(&mut rng).unwrap();
    let u = universe();
    let keys: Vec<UserKey> = (0..64).map(|m| key_for(&ms, &subset(&u, m))).collect();
    let mut checked = 0;
    for _ in 0..200 {
        let ast = random_policy(&mut rng, &u, 4);
        assert!(ast.depth() <= 4);
        let text = render_policy(&ast);
        let ct = encrypt_slice(&ms, &text, b"payload", &mut rng).unwrap();
        for (mask, key) in keys.iter().enumerate() {
            let truth = evaluate(&ast, &subset(&u, mask as u32));
            match decrypt_slice(key, &ct) {
                Ok(pt) => {
                    assert!(truth, "{text} decrypted with {mask:06b}");
                    assert_eq!(pt, b"payload");
                }
                Err(AbeError::PolicyNotSatisfied) => assert!(!truth, "{text} refused {mask:06b}"),
                Err(e) => panic!("{text} with {mask:06b}: {e}"),
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 200 * 64);
}

#[test]
fn compiled_tree_agrees_with_evaluation() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let u = universe();
    for _ in 0..300 {
        let ast = random_policy(&mut rng, &u, 4);
        let tree = compile(&ast);
        assert_eq!(tree.leaf_count(), ast.leaf_count());
        for mask in 0..64 {
            let attrs = subset(&u, mask);
            let leaves: BTreeSet<u32> = tree
                .leaves()
                .into_iter()
                .filter(|(_, a)| attrs.contains(*a))
                .map(|(i, _)| i)
                .collect();
            assert_eq!(tree.satisfied_by(&leaves), evaluate(&ast, &attrs));
        }
    }
}

#[test]
fn access_is_monotone_in_attributes() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let u = universe();
    for _ in 0..100 {
        let ast = random_policy(&mut rng, &u, 4);
        for mask in 0u32..64 {
            if evaluate(&ast, &subset(&u, mask)) {
                for extra in 0..6 {
                    assert!(evaluate(&ast, &subset(&u, mask | (1 << extra))));
                }
            }
        }
    }
}

#[test]
fn keys_hold_exactly_the_requested_attributes() {
    let ms = abe::setup(&mut ChaCha20Rng::seed_from_u64(9)).unwrap();
    let u = universe();
    for mask in 1..64 {
        let attrs = subset(&u, mask);
        let key = abe::keygen(&ms, Address::from_bytes([1; 20]), &attrs, 5).unwrap();
        assert_eq!(key.attributes(), attrs);
        let expected: BTreeMap<_, _> = attrs
            .iter()
            .map(|a| (a.clone(), abe::attribute_wrap_key(&ms, a)))
            .collect();
        assert_eq!(key.attribute_keys, expected);
    }
    assert_eq!(
        abe::keygen(&ms, Address::from_bytes([1; 20]), &AttributeSet::new(), 0),
        Err(AbeError::EmptyAttributeSet)
    );
}

#[test]
fn different_masters_do_not_interoperate() {
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let a = abe::setup(&mut rng).unwrap();
    let b = abe::setup(&mut rng).unwrap();
    let attrs = subset(&universe(), 0b11);
    let ct = encrypt_slice(&a, "a and b", b"x", &mut rng).unwrap();
    assert!(decrypt_slice(&key_for(&b, &attrs), &ct).is_err());
    assert!(decrypt_slice(&key_for(&a, &attrs), &ct).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ciphertext_encoding_roundtrips(seed in any::<u64>(), data in proptest::collection::vec(any::<u8>(), 0..256)) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ms = abe::setup(&mut rng).unwrap();
        let ast = random_policy(&mut rng, &universe(), 3);
        let ct = encrypt_slice(&ms, &render_policy(&ast), &data, &mut rng).unwrap();
        let bytes = ct.encode();
        let back = SliceCiphertext::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &ct);
        prop_assert_eq!(back.encode(), bytes);
        prop_assert_eq!(parse_policy(&back.policy_text).unwrap(), ast);
    }

    #[test]
    fn rendering_roundtrips_through_the_parser(seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ast = random_policy(&mut rng, &universe(), 4);
        prop_assert!(ast.is_canonical());
        prop_assert_eq!(parse_policy(&render_policy(&ast)).unwrap(), ast);
    }
}
