use std::collections::BTreeMap;

use proptest::prelude::*;

use recaudit_core::InteractionMatrix;

fn triples() -> impl Strategy<Value = Vec<(u8, u8, f64)>> {
    proptest::collection::vec((0u8..30, 0u8..40, prop_oneof![Just(0.0), 0.5f64..100.0]), 0..200)
}

proptest! {
    #[test]
    fn from_triples_sums_duplicates(raw in triples()) {
        let (m, users, items) = InteractionMatrix::from_triples(raw.iter().copied());
        let mut expected: BTreeMap<(u8, u8), f64> = BTreeMap::new();
        for &(u, i, s) in &raw {
            if s > 0.0 {
                *expected.entry((u, i)).or_default() += s;
            }
        }
        prop_assert_eq!(m.nnz(), expected.len());
        for (u, i, s) in m.entries() {
            let key = (*users.id_of(u).unwrap(), *items.id_of(i).unwrap());
            prop_assert!((expected[&key] - s).abs() < 1e-9);
        }
        prop_assert_eq!(m.n_users(), users.len());
        prop_assert_eq!(m.n_items(), items.len());
    }

    #[test]
    fn rows_are_sorted_and_transpose_round_trips(raw in triples()) {
        let (m, _, _) = InteractionMatrix::from_triples(raw.iter().copied());
        for (u, row) in m.rows() {
            prop_assert!(row.items.windows(2).all(|w| w[0] < w[1]));
            for (i, s) in row.iter() {
                prop_assert_eq!(m.get(u, i), Some(s));
            }
        }
        let t = m.transpose();
        prop_assert_eq!(t.nnz(), m.nnz());
        prop_assert_eq!(&t.transpose(), &m);
        let stats = m.stats();
        prop_assert!((0.0..=1.0).contains(&stats.sparsity));
    }

    #[test]
    fn retain_keeps_exactly_the_selected_cells(raw in triples(), modulus in 1u32..5) {
        let (m, _, _) = InteractionMatrix::from_triples(raw.iter().copied());
        let kept = m.retain(|u, i| (u + i) % modulus == 0);
        let expected: Vec<_> = m.entries().filter(|&(u, i, _)| (u + i) % modulus == 0).collect();
        prop_assert_eq!(kept.entries().collect::<Vec<_>>(), expected);
        prop_assert_eq!((kept.n_users(), kept.n_items()), (m.n_users(), m.n_items()));
    }
}
