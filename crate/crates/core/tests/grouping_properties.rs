use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recaudit_core::grouping::{
    balanced_sample, bucket_brackets, bucket_capped, bucket_countries_by_prevalence,
    bucket_equal_count, bucket_equal_range, NA_LABEL,
};
use recaudit_core::popindex::{item_user_counts, pop_index};
use recaudit_core::{GroupAssignment, InteractionMatrix};

/// Tries every p from 100 down and checks the definition with floating-point
/// percentages on raw user counts.
fn brute_pop_index(user: u32, m: &InteractionMatrix) -> Option<u8> {
    let items = m.row(user).items;
    if items.is_empty() {
        return None;
    }
    let others = m.n_users() - 1;
    let reach: Vec<f64> = items
        .iter()
        .map(|&i| {
            let listeners = (0..m.n_users() as u32)
                .filter(|&v| v != user && m.get(v, i).is_some())
                .count();
            if others == 0 {
                0.0
            } else {
                100.0 * listeners as f64 / others as f64
            }
        })
        .collect();
    (0..=100u8).rev().find(|&p| {
        let hits = reach.iter().filter(|&&r| r + 1e-9 >= p as f64).count();
        100.0 * hits as f64 + 1e-9 >= p as f64 * items.len() as f64
    })
}

#[test]
fn pop_index_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..200 {
        let density = rng.gen_range(0.02..0.6);
        let mut entries = Vec::new();
        for u in 0..50u32 {
            for i in 0..80u32 {
                if rng.gen::<f64>() < density {
                    entries.push((u, i, 1.0));
                }
            }
        }
        let m = InteractionMatrix::from_entries(50, 80, entries).unwrap();
        let pop = item_user_counts(&m);
        for u in 0..50u32 {
            assert_eq!(pop_index(u, &m, &pop), brute_pop_index(u, &m), "case {case} user {u}");
        }
    }
}

fn check_totals(a: &GroupAssignment, n: usize) -> Result<(), TestCaseError> {
    prop_assert_eq!(a.n_users(), n);
    prop_assert_eq!(a.sizes().iter().sum::<usize>() + a.na_count(), n);
    for (g, label) in a.labels().iter().enumerate() {
        prop_assert_ne!(label.as_str(), NA_LABEL);
        for u in a.members(g) {
            prop_assert_eq!(a.group_of(u), Some(g));
        }
    }
    Ok(())
}

fn optional_values() -> impl Strategy<Value = Vec<Option<i64>>> {
    proptest::collection::vec(proptest::option::weighted(0.9, 0i64..120), 0..300)
}

proptest! {
    #[test]
    fn every_scheme_partitions_users(values in optional_values(), k in 1usize..10, width in 1i64..30) {
        let n = values.len();
        check_totals(&bucket_equal_count(&values, k), n)?;
        check_totals(&bucket_equal_range(&values, width, Some(1)), n)?;
        check_totals(&bucket_brackets(&values, &[1, 18, 25, 35, 45, 50, 56]), n)?;
        check_totals(&bucket_capped(&values, 13), n)?;
        let countries: Vec<Option<String>> = values.iter().map(|v| v.map(|x| format!("c{}", x % 17))).collect();
        let refs: Vec<Option<&str>> = countries.iter().map(|c| c.as_deref()).collect();
        check_totals(&bucket_countries_by_prevalence(&refs, k), n)?;
    }

    #[test]
    fn equal_count_is_ordered_and_near_balanced(values in optional_values(), k in 1usize..10) {
        let a = bucket_equal_count(&values, k);
        prop_assert!(a.labels().len() <= k);
        // bins are value ranges: every member of a lower bin is below every
        // member of a higher bin
        let ranges: Vec<(i64, i64)> = (0..a.labels().len())
            .filter_map(|g| {
                let vs: Vec<i64> = a.members(g).iter().map(|&u| values[u as usize].unwrap()).collect();
                Some((*vs.iter().min()?, *vs.iter().max()?))
            })
            .collect();
        prop_assert!(ranges.windows(2).all(|w| w[0].1 < w[1].0));
        // size spread is bounded by the largest tie class
        let present: Vec<i64> = values.iter().flatten().copied().collect();
        let t = present.iter().map(|v| present.iter().filter(|w| *w == v).count()).max().unwrap_or(0);
        let sizes: Vec<usize> = a.sizes().into_iter().filter(|&s| s > 0).collect();
        if sizes.len() == k {
            let spread = sizes.iter().max().unwrap() - sizes.iter().min().unwrap();
            prop_assert!(spread <= (2 * t).saturating_sub(1).max(1), "sizes {:?} tie {}", sizes, t);
        }
    }

    #[test]
    fn balanced_sample_is_balanced(values in optional_values(), k in 2usize..6, seed in 0u64..50) {
        let a = bucket_equal_count(&values, k);
        let sample = balanced_sample(&a, seed);
        let nonempty: Vec<usize> = a.sizes().into_iter().filter(|&s| s > 0).collect();
        let m = nonempty.iter().copied().min().unwrap_or(0);
        prop_assert_eq!(sample.len(), m * nonempty.len());
        prop_assert!(sample.windows(2).all(|w| w[0] < w[1]));
        for g in 0..a.labels().len() {
            let c = sample.iter().filter(|&&u| a.group_of(u) == Some(g)).count();
            prop_assert!(c == m || a.sizes()[g] == 0);
        }
        prop_assert_eq!(sample, balanced_sample(&a, seed));
    }

    #[test]
    fn permutation_preserves_sizes(values in optional_values(), seed in 0u64..50) {
        let a = bucket_equal_count(&values, 4);
        let p = a.permuted(seed);
        prop_assert_eq!(p.sizes(), a.sizes());
        prop_assert_eq!(p.na_count(), a.na_count());
    }
}
