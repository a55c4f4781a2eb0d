use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recaudit_core::evaluation::{self, make_folds, FoldScheme, Persistence};
use recaudit_core::InteractionMatrix;

// Reference implementations written directly from the textbook definitions,
// with set membership and explicit powers.
fn ref_ndcg(ranked: &[u32], relevant: &BTreeSet<u32>) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let mut dcg = 0.0;
    for (i, item) in ranked.iter().enumerate() {
        if relevant.contains(item) {
            dcg += 1.0 / ((i + 2) as f64).log2();
        }
    }
    let mut idcg = 0.0;
    for i in 0..relevant.len().min(ranked.len()) {
        idcg += 1.0 / ((i + 2) as f64).log2();
    }
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

fn ref_mrr(ranked: &[u32], relevant: &BTreeSet<u32>) -> f64 {
    for (i, item) in ranked.iter().enumerate() {
        if relevant.contains(item) {
            return 1.0 / (i + 1) as f64;
        }
    }
    0.0
}

fn ref_rbp(ranked: &[u32], relevant: &BTreeSet<u32>, p: f64) -> f64 {
    let mut s = 0.0;
    for (i, item) in ranked.iter().enumerate() {
        if relevant.contains(item) {
            s += p.powi(i as i32);
        }
    }
    (1.0 - p) * s
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<u32>, Vec<u32>) {
    let universe = rng.gen_range(1..200u32);
    let mut items: Vec<u32> = (0..universe).collect();
    items.shuffle(rng);
    let ranked = items[..rng.gen_range(0..=universe as usize)].to_vec();
    let mut relevant: Vec<u32> = (0..universe).filter(|_| rng.gen::<f64>() < 0.1).collect();
    relevant.sort_unstable();
    (ranked, relevant)
}

#[test]
fn metrics_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let (ranked, relevant) = random_instance(&mut rng);
        let set: BTreeSet<u32> = relevant.iter().copied().collect();
        let gamma = rng.gen_range(0.05..0.95);
        let p = Persistence::new(gamma).unwrap();
        assert!((evaluation::ndcg(&ranked, &relevant) - ref_ndcg(&ranked, &set)).abs() < 1e-12);
        assert!((evaluation::mrr(&ranked, &relevant) - ref_mrr(&ranked, &set)).abs() < 1e-12);
        assert!((evaluation::rbp(&ranked, &relevant, p) - ref_rbp(&ranked, &set, gamma)).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn metrics_stay_in_range(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ranked, relevant) = random_instance(&mut rng);
        let n = evaluation::ndcg(&ranked, &relevant);
        let m = evaluation::mrr(&ranked, &relevant);
        let r = evaluation::rbp(&ranked, &relevant, Persistence::default());
        prop_assert!((0.0..=1.0 + 1e-15).contains(&n));
        prop_assert!((0.0..=1.0).contains(&m));
        prop_assert!((0.0..1.0).contains(&r));
    }

    #[test]
    fn ndcg_ignores_the_tail_after_the_last_hit(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ranked, relevant) = random_instance(&mut rng);
        let Some(last) = ranked.iter().rposition(|i| relevant.binary_search(i).is_ok()) else {
            return Ok(());
        };
        let cut = &ranked[..=last];
        // same DCG; IDCG is capped by list length only when the list is
        // shorter than the relevant set
        if cut.len() >= relevant.len() {
            prop_assert!((evaluation::ndcg(cut, &relevant) - evaluation::ndcg(&ranked, &relevant)).abs() < 1e-12);
        }
        let first = ranked.iter().position(|i| relevant.binary_search(i).is_ok()).unwrap();
        prop_assert_eq!(evaluation::mrr(&ranked[..=first], &relevant), evaluation::mrr(&ranked, &relevant));
    }

    #[test]
    fn partitions_cover_every_user_once(n in 5usize..300, k in 1usize..6, seed in 0u64..100) {
        let users: Vec<u32> = (0..n as u32).collect();
        let plan = make_folds(&users, k, FoldScheme::Partition, seed).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(|f| f.test_users.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<u32> = plan.folds.iter().flat_map(|f| f.test_users.clone()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, users);
    }

    #[test]
    fn holdouts_never_leak_into_training(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries: Vec<(u32, u32, f64)> = (0..30u32)
            .flat_map(|u| (0..40u32).map(move |i| (u, i)))
            .filter(|_| rng.gen::<f64>() < 0.2)
            .map(|(u, i)| (u, i, 1.0))
            .collect();
        let m = InteractionMatrix::from_entries(30, 40, entries).unwrap();
        let users: Vec<u32> = (0..30).collect();
        let mut plan = make_folds(&users, 5, FoldScheme::Partition, seed).unwrap();
        plan.assign_holdouts(&m, 0.2).unwrap();
        for fold in &plan.folds {
            let train = fold.training_matrix(&m);
            let mut removed = 0;
            for h in &fold.holdouts {
                prop_assert!(!h.items.is_empty());
                for &i in &h.items {
                    prop_assert!(m.get(h.user, i).is_some());
                    prop_assert!(train.get(h.user, i).is_none());
                }
                removed += h.items.len();
            }
            prop_assert_eq!(train.nnz() + removed, m.nnz());
        }
    }
}
