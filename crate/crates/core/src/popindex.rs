//! The pop-index: an h-index-style measure of how mainstream a user's items
//! are, plus the usage statistic.
//!
//! A user's pop-index is the largest integer `p` in 0..=100 such that at
//! least `p`% of the user's items were consumed by at least `p`% of the other
//! users. All comparisons are done in integer arithmetic.

use alloc::vec;
use alloc::vec::Vec;

use crate::model::{Dataset, InteractionMatrix, Provenance};

/// Distinct-user count per item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemPopularity {
    pub counts: Vec<u32>,
    pub n_users: usize,
}

pub fn item_user_counts(m: &InteractionMatrix) -> ItemPopularity {
    let mut counts = vec![0u32; m.n_items()];
    // rows hold each item at most once
    for (_, item, _) in m.entries() {
        counts[item as usize] += 1;
    }
    ItemPopularity {
        counts,
        n_users: m.n_users(),
    }
}

impl ItemPopularity {
    /// Largest integer `p` with `100 * (count - 1) >= p * (n_users - 1)`,
    /// i.e. the item's coverage of the other users, floored.
    pub fn coverage_floor(&self, item: u32) -> u8 {
        let others = self.n_users.saturating_sub(1) as u64;
        if others == 0 {
            return 0;
        }
        let reach = self.counts[item as usize].saturating_sub(1) as u64;
        ((100 * reach) / others).min(100) as u8
    }
}

/// `None` for a user without items.
pub fn pop_index(user: u32, m: &InteractionMatrix, pop: &ItemPopularity) -> Option<u8> {
    let items = m.row(user).items;
    if items.is_empty() {
        return None;
    }
    // histogram of floored coverages, scanned from the top
    let mut hist = [0u64; 101];
    for &i in items {
        hist[pop.coverage_floor(i) as usize] += 1;
    }
    let n = items.len() as u64;
    let mut at_least = 0u64;
    for p in (0..=100u64).rev() {
        at_least += hist[p as usize];
        if 100 * at_least >= p * n {
            return Some(p as u8);
        }
    }
    unreachable!("p = 0 always qualifies")
}

/// Total plays for LFM360K (and synthetic data), number of rated items for
/// ML1M.
pub fn usage(user: u32, m: &InteractionMatrix, provenance: Provenance) -> u64 {
    let row = m.row(user);
    match provenance {
        Provenance::Ml1m => row.len() as u64,
        Provenance::Lfm360k | Provenance::Synthetic => {
            libm::round(row.strengths.iter().sum::<f64>()) as u64
        }
    }
}

/// Fills `usage` and `pop_index` for every user from the full matrix.
pub fn annotate(dataset: &mut Dataset) {
    let pop = item_user_counts(&dataset.matrix);
    for (u, attrs) in dataset.attributes.iter_mut().enumerate() {
        let u = u as u32;
        attrs.usage = Some(usage(u, &dataset.matrix, dataset.provenance));
        attrs.pop_index = pop_index(u, &dataset.matrix, &pop);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(n_users: usize, n_items: usize, pairs: &[(u32, u32)]) -> InteractionMatrix {
        InteractionMatrix::from_entries(
            n_users,
            n_items,
            pairs.iter().map(|&(u, i)| (u, i, 1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn counts_per_item() {
        let m = matrix(4, 2, &[(0, 0), (1, 0), (3, 0), (2, 1)]);
        assert_eq!(item_user_counts(&m).counts, vec![3, 1]);
        let empty = InteractionMatrix::empty(3, 2);
        assert_eq!(item_user_counts(&empty).counts, vec![0, 0]);
    }

    #[test]
    fn everyone_shares_everything() {
        let pairs: Vec<(u32, u32)> = (0..5).flat_map(|u| (0..3).map(move |i| (u, i))).collect();
        let m = matrix(5, 3, &pairs);
        let pop = item_user_counts(&m);
        assert_eq!(pop_index(0, &m, &pop), Some(100));
    }

    #[test]
    fn unique_items_give_zero() {
        let m = matrix(3, 3, &[(0, 0), (1, 1), (2, 2)]);
        let pop = item_user_counts(&m);
        assert_eq!(pop_index(0, &m, &pop), Some(0));
    }

    #[test]
    fn missing_for_empty_user() {
        let m = matrix(2, 1, &[(0, 0)]);
        let pop = item_user_counts(&m);
        assert_eq!(pop_index(1, &m, &pop), None);
    }

    #[test]
    fn half_coverage_example() {
        // 11 users. User 0 has 4 items reaching 10, 5, 2 and 0 other users:
        // coverages 100%, 50%, 20%, 0%. At p = 50: 2 of 4 items (50%) reach
        // 50% of others, at p = 51 only 1 of 4 does.
        let mut pairs = vec![(0, 0), (0, 1), (0, 2), (0, 3)];
        pairs.extend((1..=10).map(|u| (u, 0)));
        pairs.extend((1..=5).map(|u| (u, 1)));
        pairs.extend((1..=2).map(|u| (u, 2)));
        let m = matrix(11, 4, &pairs);
        let pop = item_user_counts(&m);
        assert_eq!(pop_index(0, &m, &pop), Some(50));
    }

    #[test]
    fn usage_rules() {
        let m = InteractionMatrix::from_entries(1, 2, vec![(0, 0, 3.0), (0, 1, 5.0)]).unwrap();
        assert_eq!(usage(0, &m, Provenance::Lfm360k), 8);
        assert_eq!(usage(0, &m, Provenance::Ml1m), 2);
    }
}
