use cake_core::policy::{compile, evaluate, random_policy, AttributeId, AttributeSet};
use cake_core::sss::{reconstruct, reconstruct_tree, share, share_tree, FieldElement, LeafShareMap};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[test]
fn every_threshold_subset_reconstructs_and_smaller_ones_do_not() {
    let mut rng = ChaCha20Rng::seed_from_u64(55);
    for n in 1..=5usize {
        for t in 1..=n {
            let secret = FieldElement::random(&mut rng);
            let shares = share(&secret, t, n, &mut rng).unwrap();
            for mask in 1u32..(1 << n) {
                let subset: Vec<_> = shares
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, s)| s.clone())
                    .collect();
                let got = reconstruct(&subset).unwrap();
                if subset.len() >= t {
                    assert_eq!(got, secret, "t={t} n={n} mask={mask:b}");
                } else if subset.len() == t - 1 {
                    assert_ne!(got, secret, "t={t} n={n} mask={mask:b}");
                }
            }
        }
    }
}

#[test]
fn tree_sharing_is_dual_to_policy_evaluation() {
    let mut rng = ChaCha20Rng::seed_from_u64(56);
    let universe: Vec<AttributeId> = ["a", "b", "c", "d", "e", "f"]
        .iter()
        .map(|n| AttributeId::new(n).unwrap())
        .collect();
    for _ in 0..200 {
        let ast = random_policy(&mut rng, &universe, 4);
        let tree = compile(&ast);
        let secret = FieldElement::random(&mut rng);
        let shares = share_tree(&tree, &secret, &mut rng);
        assert_eq!(shares.len(), tree.leaf_count());
        for mask in 0u32..64 {
            let attrs: AttributeSet = universe
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, a)| a.clone())
                .collect();
            let available: LeafShareMap = tree
                .leaves()
                .into_iter()
                .filter(|(_, a)| attrs.contains(*a))
                .map(|(i, _)| (i, shares[&i].clone()))
                .collect();
            let got = reconstruct_tree(&tree, &available);
            if evaluate(&ast, &attrs) {
                assert_eq!(got.as_ref(), Some(&secret));
            } else {
                assert_eq!(got, None);
            }
        }
    }
}
