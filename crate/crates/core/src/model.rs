//! Shared data model: the sparse user-item matrix, id maps, user attributes
//! and dataset-level statistics.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("entry ({user}, {item}) outside a {n_users}x{n_items} matrix")]
    OutOfRange {
        user: u32,
        item: u32,
        n_users: usize,
        n_items: usize,
    },
    #[error("duplicate entry ({user}, {item})")]
    Duplicate { user: u32, item: u32 },
    #[error("entry ({user}, {item}) has strength {strength}; strengths must be finite and > 0")]
    InvalidStrength { user: u32, item: u32, strength: f64 },
}

/// Bidirectional map between external ids and dense indices, assigned in
/// first-seen order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMap<K: Ord> {
    ids: Vec<K>,
    index: BTreeMap<K, u32>,
}

impl<K: Ord> Default for IdMap<K> {
    fn default() -> Self {
        Self {
            ids: Vec::new(),
            index: BTreeMap::new(),
        }
    }
}

impl<K: Ord + Clone> IdMap<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_insert(&mut self, id: K) -> u32 {
        if let Some(&idx) = self.index.get(&id) {
            return idx;
        }
        let idx = self.ids.len() as u32;
        self.ids.push(id.clone());
        self.index.insert(id, idx);
        idx
    }

    pub fn index_of<Q>(&self, id: &Q) -> Option<u32>
    where
        K: core::borrow::Borrow<Q>,
        Q: Ord + ?Sized,
    {
        self.index.get(id).copied()
    }

    pub fn id_of(&self, index: u32) -> Option<&K> {
        self.ids.get(index as usize)
    }

    pub fn ids(&self) -> &[K] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Sparse user x item matrix of positive interaction strengths, stored
/// row-major (one contiguous row per user, items ascending within a row).
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    n_users: usize,
    n_items: usize,
    indptr: Vec<usize>,
    items: Vec<u32>,
    strengths: Vec<f64>,
}

/// One user's row.
#[derive(Debug, Clone, Copy)]
pub struct Row<'a> {
    pub items: &'a [u32],
    pub strengths: &'a [f64],
}

impl<'a> Row<'a> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + 'a {
        self.items
            .iter()
            .copied()
            .zip(self.strengths.iter().copied())
    }
}

impl InteractionMatrix {
    pub fn empty(n_users: usize, n_items: usize) -> Self {
        Self {
            n_users,
            n_items,
            indptr: alloc::vec![0; n_users + 1],
            items: Vec::new(),
            strengths: Vec::new(),
        }
    }

    /// Strict constructor: every invariant is checked, entries may come in
    /// any order.
    pub fn from_entries(
        n_users: usize,
        n_items: usize,
        mut entries: Vec<(u32, u32, f64)>,
    ) -> Result<Self, ModelError> {
        for &(user, item, strength) in &entries {
            if user as usize >= n_users || item as usize >= n_items {
                return Err(ModelError::OutOfRange {
                    user,
                    item,
                    n_users,
                    n_items,
                });
            }
            if !(strength.is_finite() && strength > 0.0) {
                return Err(ModelError::InvalidStrength {
                    user,
                    item,
                    strength,
                });
            }
        }
        entries.sort_unstable_by_key(|&(u, i, _)| (u, i));
        if let Some(w) = entries
            .windows(2)
            .find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1))
        {
            return Err(ModelError::Duplicate {
                user: w[0].0,
                item: w[0].1,
            });
        }
        Ok(Self::from_sorted_unique(n_users, n_items, &entries))
    }

    fn from_sorted_unique(n_users: usize, n_items: usize, entries: &[(u32, u32, f64)]) -> Self {
        let mut indptr = alloc::vec![0usize; n_users + 1];
        for &(u, _, _) in entries {
            indptr[u as usize + 1] += 1;
        }
        for u in 0..n_users {
            indptr[u + 1] += indptr[u];
        }
        Self {
            n_users,
            n_items,
            indptr,
            items: entries.iter().map(|e| e.1).collect(),
            strengths: entries.iter().map(|e| e.2).collect(),
        }
    }

    /// Tolerant builder from external-id triples. Indices are assigned in
    /// first-seen order, repeated (user, item) pairs are summed and
    /// zero-strength triples are dropped before any index is assigned.
    pub fn from_triples<U, I, T>(triples: T) -> (Self, IdMap<U>, IdMap<I>)
    where
        U: Ord + Clone,
        I: Ord + Clone,
        T: IntoIterator<Item = (U, I, f64)>,
    {
        let mut users = IdMap::new();
        let mut items = IdMap::new();
        let mut entries = Vec::new();
        for (u, i, s) in triples {
            if !(s.is_finite() && s > 0.0) {
                continue;
            }
            let u = users.get_or_insert(u);
            let i = items.get_or_insert(i);
            entries.push((u, i, s));
        }
        // stable sort keeps first-seen order among duplicates, so sums are
        // accumulated in input order
        entries.sort_by_key(|&(u, i, _)| (u, i));
        let mut merged: Vec<(u32, u32, f64)> = Vec::with_capacity(entries.len());
        for (u, i, s) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == u && last.1 == i => last.2 += s,
                _ => merged.push((u, i, s)),
            }
        }
        let m = Self::from_sorted_unique(users.len(), items.len(), &merged);
        (m, users, items)
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn nnz(&self) -> usize {
        self.items.len()
    }

    pub fn row(&self, user: u32) -> Row<'_> {
        let (a, b) = (self.indptr[user as usize], self.indptr[user as usize + 1]);
        Row {
            items: &self.items[a..b],
            strengths: &self.strengths[a..b],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = (u32, Row<'_>)> + '_ {
        (0..self.n_users as u32).map(move |u| (u, self.row(u)))
    }

    /// All entries in (user, item) order.
    pub fn entries(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.rows()
            .flat_map(|(u, row)| row.iter().map(move |(i, s)| (u, i, s)))
    }

    pub fn get(&self, user: u32, item: u32) -> Option<f64> {
        let row = self.row(user);
        row.items
            .binary_search(&item)
            .ok()
            .map(|pos| row.strengths[pos])
    }

    /// Item-major copy: row `i` of the result lists the users of item `i`.
    pub fn transpose(&self) -> Self {
        let mut indptr = alloc::vec![0usize; self.n_items + 1];
        for &i in &self.items {
            indptr[i as usize + 1] += 1;
        }
        for i in 0..self.n_items {
            indptr[i + 1] += indptr[i];
        }
        let mut cursor = indptr.clone();
        let mut users = alloc::vec![0u32; self.nnz()];
        let mut strengths = alloc::vec![0f64; self.nnz()];
        // users visited in ascending order, so columns come out sorted
        for (u, i, s) in self.entries() {
            let slot = &mut cursor[i as usize];
            users[*slot] = u;
            strengths[*slot] = s;
            *slot += 1;
        }
        Self {
            n_users: self.n_items,
            n_items: self.n_users,
            indptr,
            items: users,
            strengths,
        }
    }

    /// Same dimensions, keeping only the entries the predicate accepts.
    pub fn retain<F: FnMut(u32, u32) -> bool>(&self, mut keep: F) -> Self {
        let kept: Vec<_> = self.entries().filter(|&(u, i, _)| keep(u, i)).collect();
        Self::from_sorted_unique(self.n_users, self.n_items, &kept)
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats::new(self.n_users, self.n_items, self.nnz())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    pub sparsity: f64,
}

impl DatasetStats {
    pub fn new(n_users: usize, n_items: usize, n_interactions: usize) -> Self {
        let cells = n_users as f64 * n_items as f64;
        let sparsity = if cells == 0.0 {
            0.0
        } else {
            1.0 - n_interactions as f64 / cells
        };
        Self {
            n_users,
            n_items,
            n_interactions,
            sparsity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub enum Gender {
    Male,
    Female,
    #[default]
    Missing,
}

impl Gender {
    pub fn label(self) -> Option<&'static str> {
        match self {
            Gender::Male => Some("m"),
            Gender::Female => Some("f"),
            Gender::Missing => None,
        }
    }

    /// Accepts `m`/`f` in either case; anything else is missing.
    pub fn parse(s: &str) -> Self {
        match s.trim() {
            "m" | "M" => Gender::Male,
            "f" | "F" => Gender::Female,
            _ => Gender::Missing,
        }
    }
}

/// Age bracket codes used by the MovieLens 1M user table.
pub const ML1M_AGE_CODES: [u32; 7] = [1, 18, 25, 35, 45, 50, 56];

/// Per-user demographic record plus the derived usage and pop-index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UserAttributes {
    pub user_id: String,
    pub gender: Gender,
    /// Years for LFM360K, bracket code for ML1M.
    pub age: Option<u32>,
    pub country: Option<String>,
    pub signup: Option<String>,
    pub usage: Option<u64>,
    pub pop_index: Option<u8>,
}

impl UserAttributes {
    pub fn new(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Lfm360k,
    Ml1m,
    Synthetic,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Lfm360k => "lfm360k",
            Provenance::Ml1m => "ml1m",
            Provenance::Synthetic => "synthetic",
        }
    }

    /// Users with at most this many distinct items are dropped before
    /// training.
    pub fn cold_start_threshold(self) -> Option<usize> {
        match self {
            Provenance::Lfm360k => Some(40),
            Provenance::Ml1m | Provenance::Synthetic => None,
        }
    }
}

impl core::str::FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lfm360k" | "lastfm" | "lfm" => Ok(Provenance::Lfm360k),
            "ml1m" | "movielens" => Ok(Provenance::Ml1m),
            "synthetic" => Ok(Provenance::Synthetic),
            other => Err(alloc::format!("unknown dataset kind `{other}`")),
        }
    }
}

/// Parsed but not yet indexed dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub triples: Vec<(String, String, f64)>,
    pub attributes: Vec<UserAttributes>,
    pub provenance: Provenance,
}

/// Applies the provenance's cold-start rule.
pub fn cold_start_filter(dataset: RawDataset) -> RawDataset {
    match dataset.provenance.cold_start_threshold() {
        Some(max_items) => remove_light_users(dataset, max_items).0,
        None => dataset,
    }
}

/// Drops every user with `max_items` or fewer distinct items, together with
/// their profile. Other users' interactions are untouched. Returns the number
/// of users removed.
pub fn remove_light_users(dataset: RawDataset, max_items: usize) -> (RawDataset, usize) {
    let RawDataset {
        triples,
        attributes,
        provenance,
    } = dataset;
    let mut users: IdMap<&str> = IdMap::new();
    let mut items: IdMap<&str> = IdMap::new();
    let mut pairs: Vec<(u32, u32)> = triples
        .iter()
        .filter(|t| t.2 > 0.0)
        .map(|(u, i, _)| (users.get_or_insert(u.as_str()), items.get_or_insert(i.as_str())))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    let mut distinct = alloc::vec![0usize; users.len()];
    for (u, _) in pairs {
        distinct[u as usize] += 1;
    }
    let keep_user = |id: &str| {
        users
            .index_of(id)
            .is_some_and(|u| distinct[u as usize] > max_items)
    };
    let removed = distinct.iter().filter(|&&d| d <= max_items).count()
        + attributes
            .iter()
            .filter(|a| users.index_of(a.user_id.as_str()).is_none())
            .count();
    let attributes: Vec<_> = attributes
        .iter()
        .filter(|a| keep_user(&a.user_id))
        .cloned()
        .collect();
    let triples: Vec<_> = triples
        .iter()
        .filter(|t| keep_user(&t.0))
        .cloned()
        .collect();
    (
        RawDataset {
            triples,
            attributes,
            provenance,
        },
        removed,
    )
}

/// Indexed dataset: the interaction matrix plus attributes aligned with its
/// user indices.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub provenance: Provenance,
    pub matrix: InteractionMatrix,
    pub users: IdMap<String>,
    pub items: IdMap<String>,
    /// `attributes[u]` describes matrix user `u`.
    pub attributes: Vec<UserAttributes>,
}

impl Dataset {
    /// Indexes a raw dataset. Users appear in first-seen order of the
    /// interaction triples; profiles of users without interactions are
    /// dropped and users without a profile get an all-missing record.
    pub fn from_raw(raw: RawDataset) -> Self {
        let (matrix, users, items) = InteractionMatrix::from_triples(raw.triples);
        let mut attributes: Vec<UserAttributes> = users
            .ids()
            .iter()
            .map(|id: &String| UserAttributes::new(id.clone()))
            .collect();
        let mut seen = alloc::vec![false; users.len()];
        let mut unmatched = 0usize;
        for a in raw.attributes {
            match users.index_of(a.user_id.as_str()) {
                Some(u) if !seen[u as usize] => {
                    seen[u as usize] = true;
                    attributes[u as usize] = a;
                }
                Some(_) => {}
                None => unmatched += 1,
            }
        }
        if unmatched > 0 {
            log::info!("{unmatched} profiles have no interactions and were dropped");
        }
        Self {
            provenance: raw.provenance,
            matrix,
            users,
            items,
            attributes,
        }
    }

    pub fn n_users(&self) -> usize {
        self.matrix.n_users()
    }
}

/// GDP per capita keyed by canonical (trimmed, lower-cased) country name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GdpTable {
    entries: BTreeMap<String, f64>,
}

impl GdpTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn canonical(name: &str) -> String {
        name.trim().to_lowercase()
    }

    /// Returns false (and stores nothing) for a non-positive or non-finite
    /// value.
    pub fn insert(&mut self, country: &str, gdp_per_capita: f64) -> bool {
        if !(gdp_per_capita.is_finite() && gdp_per_capita > 0.0) {
            return false;
        }
        self.entries.insert(Self::canonical(country), gdp_per_capita);
        true
    }

    pub fn get(&self, country: &str) -> Option<f64> {
        self.entries.get(&Self::canonical(country)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn s(x: &str) -> String {
        x.to_string()
    }

    #[test]
    fn empty_triples_give_empty_matrix() {
        let (m, users, items) = InteractionMatrix::from_triples(Vec::<(String, String, f64)>::new());
        assert_eq!((m.n_users(), m.n_items(), m.nnz()), (0, 0, 0));
        assert!(users.is_empty() && items.is_empty());
        assert_eq!(m.stats().sparsity, 0.0);
    }

    #[test]
    fn duplicates_merge_by_sum() {
        let (m, _, _) =
            InteractionMatrix::from_triples(vec![(s("u1"), s("a1"), 3.0), (s("u1"), s("a1"), 2.0)]);
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 0), Some(5.0));
    }

    #[test]
    fn zero_strength_triples_are_dropped_before_indexing() {
        let (m, users, items) = InteractionMatrix::from_triples(vec![
            (s("ghost"), s("x"), 0.0),
            (s("u"), s("a"), 1.0),
        ]);
        assert_eq!(users.ids(), &[s("u")]);
        assert_eq!(items.ids(), &[s("a")]);
        assert_eq!(m.nnz(), 1);
    }

    #[test]
    fn first_seen_index_order() {
        let (_, users, items) = InteractionMatrix::from_triples(vec![
            ("b", "y", 1.0),
            ("a", "x", 1.0),
            ("b", "x", 1.0),
        ]);
        assert_eq!(users.ids(), &["b", "a"]);
        assert_eq!(items.ids(), &["y", "x"]);
        assert_eq!(users.index_of("a"), Some(1));
    }

    #[test]
    fn sparsity_of_two_by_two() {
        let m = InteractionMatrix::from_entries(2, 2, vec![(1, 0, 1.0)]).unwrap();
        assert_eq!(m.stats().sparsity, 0.75);
    }

    #[test]
    fn strict_constructor_rejects_bad_entries() {
        assert!(matches!(
            InteractionMatrix::from_entries(1, 1, vec![(0, 1, 1.0)]),
            Err(ModelError::OutOfRange { .. })
        ));
        assert!(matches!(
            InteractionMatrix::from_entries(1, 1, vec![(0, 0, 0.0)]),
            Err(ModelError::InvalidStrength { .. })
        ));
        assert!(matches!(
            InteractionMatrix::from_entries(1, 1, vec![(0, 0, 1.0), (0, 0, 2.0)]),
            Err(ModelError::Duplicate { .. })
        ));
    }

    #[test]
    fn transpose_round_trips() {
        let m = InteractionMatrix::from_entries(
            3,
            4,
            vec![(0, 3, 1.0), (2, 0, 2.0), (1, 3, 3.0), (0, 1, 4.0)],
        )
        .unwrap();
        let t = m.transpose();
        assert_eq!(t.n_users(), 4);
        assert_eq!(t.row(3).items, &[0, 1]);
        assert_eq!(t.transpose(), m);
    }

    fn user_with_items(id: &str, n: usize) -> Vec<(String, String, f64)> {
        (0..n)
            .map(|i| (s(id), alloc::format!("item{i}"), 1.0))
            .collect()
    }

    #[test]
    fn cold_start_boundary() {
        let mut triples = user_with_items("forty", 40);
        triples.extend(user_with_items("fortyone", 41));
        // repeats do not count as distinct items
        triples.extend(user_with_items("forty", 10));
        let raw = RawDataset {
            triples,
            attributes: vec![UserAttributes::new("forty"), UserAttributes::new("fortyone")],
            provenance: Provenance::Lfm360k,
        };
        let out = cold_start_filter(raw);
        assert!(out.triples.iter().all(|t| t.0 == "fortyone"));
        assert_eq!(out.triples.len(), 41);
        assert_eq!(out.attributes.len(), 1);
        assert_eq!(out.attributes[0].user_id, "fortyone");
    }

    #[test]
    fn cold_start_is_noop_for_movielens() {
        let raw = RawDataset {
            triples: user_with_items("u", 3),
            attributes: vec![],
            provenance: Provenance::Ml1m,
        };
        assert_eq!(cold_start_filter(raw.clone()), raw);
    }

    #[test]
    fn cold_start_fixture_of_hundred_users() {
        // 12 light users (10..=40 items), 88 heavy ones (41..=60)
        let mut triples = Vec::new();
        for u in 0..100 {
            let n = if u < 12 { 10 + u * 2 + 8 } else { 41 + (u % 20) };
            triples.extend(user_with_items(&alloc::format!("u{u}"), n));
        }
        let raw = RawDataset {
            triples,
            attributes: vec![],
            provenance: Provenance::Lfm360k,
        };
        let (out, removed) = remove_light_users(raw, 40);
        assert_eq!(removed, 12);
        let (m, _, _) = InteractionMatrix::from_triples(out.triples);
        assert_eq!(m.n_users(), 88);
        assert!(m.rows().all(|(_, r)| r.len() >= 41));
    }

    #[test]
    fn dataset_aligns_attributes() {
        let mut a = UserAttributes::new("b");
        a.gender = Gender::Female;
        let raw = RawDataset {
            triples: vec![(s("a"), s("x"), 1.0), (s("b"), s("x"), 1.0)],
            attributes: vec![a.clone(), UserAttributes::new("nobody")],
            provenance: Provenance::Synthetic,
        };
        let ds = Dataset::from_raw(raw);
        assert_eq!(ds.attributes.len(), 2);
        assert_eq!(ds.attributes[1], a);
        assert_eq!(ds.attributes[0].gender, Gender::Missing);
    }

    #[test]
    fn gdp_lookup_is_case_insensitive() {
        let mut t = GdpTable::new();
        assert!(t.insert(" Mexico ", 9926.4));
        assert!(!t.insert("Nowhere", -1.0));
        assert_eq!(t.get("mexico"), Some(9926.4));
        assert_eq!(t.len(), 1);
    }
}
