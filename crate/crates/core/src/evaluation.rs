//! Cross-validation folds, per-user holdout splits and the three ranking
//! metrics (NDCG, MRR, RBP) with binary relevance.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::als::AlsModel;
use crate::model::InteractionMatrix;
use crate::rng::{self, stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("cannot split {n_users} users into {k} folds")]
    TooFewUsers { n_users: usize, k: usize },
    #[error("{k} folds of {sample_size} sampled users need {needed} users, have {n_users}")]
    SampleTooLarge {
        n_users: usize,
        k: usize,
        sample_size: usize,
        needed: usize,
    },
    #[error("fold count must be positive")]
    NoFolds,
    #[error("rbp persistence {0} is outside (0, 1)")]
    Persistence(f64),
    #[error("holdout fraction {0} is outside (0, 1)")]
    HoldoutFraction(f64),
    #[error("user has {0} items; need at least 2 to hold any out")]
    TooFewItems(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldScheme {
    /// Each fold tests `sample_size` users drawn without replacement; folds
    /// are disjoint but need not cover every user.
    Sample { sample_size: usize },
    /// Folds partition all users; sizes differ by at most one.
    Partition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeldOut {
    pub user: u32,
    /// Sorted.
    pub items: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub index: usize,
    /// Sorted ascending.
    pub test_users: Vec<u32>,
    /// One entry per test user that could be split, in user order.
    pub holdouts: Vec<HeldOut>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
    pub seed: u64,
    pub scheme: FoldScheme,
}

/// Shuffles `users` with the fold stream of `seed` and chunks them into `k`
/// test sets.
pub fn make_folds(
    users: &[u32],
    k: usize,
    scheme: FoldScheme,
    seed: u64,
) -> Result<FoldPlan, EvalError> {
    if k == 0 {
        return Err(EvalError::NoFolds);
    }
    let n = users.len();
    let mut order = users.to_vec();
    order.shuffle(&mut rng::rng_for(seed, &[stream::FOLDS]));
    let bounds: Vec<(usize, usize)> = match scheme {
        FoldScheme::Partition => {
            if k > n {
                return Err(EvalError::TooFewUsers { n_users: n, k });
            }
            (0..k).map(|f| (f * n / k, (f + 1) * n / k)).collect()
        }
        FoldScheme::Sample { sample_size } => {
            let needed = k * sample_size;
            if needed > n || sample_size == 0 {
                return Err(EvalError::SampleTooLarge {
                    n_users: n,
                    k,
                    sample_size,
                    needed,
                });
            }
            (0..k)
                .map(|f| (f * sample_size, (f + 1) * sample_size))
                .collect()
        }
    };
    let folds = bounds
        .into_iter()
        .enumerate()
        .map(|(index, (a, b))| {
            let mut test_users = order[a..b].to_vec();
            test_users.sort_unstable();
            Fold {
                index,
                test_users,
                holdouts: Vec::new(),
            }
        })
        .collect();
    Ok(FoldPlan { folds, seed, scheme })
}

/// Number of held-out items for a user with `n` items.
pub fn holdout_size(n: usize, fraction: f64) -> usize {
    // the epsilon keeps products like 0.2 * 35 from flooring one short
    let raw = libm::floor(fraction * n as f64 + 1e-9) as usize;
    raw.max(1).min(n.saturating_sub(1))
}

/// Splits one user's items into (train, held-out), both sorted.
pub fn holdout_split(
    items: &[u32],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<u32>, Vec<u32>), EvalError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(EvalError::HoldoutFraction(fraction));
    }
    if items.len() < 2 {
        return Err(EvalError::TooFewItems(items.len()));
    }
    let n_out = holdout_size(items.len(), fraction);
    let mut shuffled = items.to_vec();
    shuffled.shuffle(&mut rng::rng_for(seed, &[]));
    let mut held = shuffled[..n_out].to_vec();
    let mut train = shuffled[n_out..].to_vec();
    held.sort_unstable();
    train.sort_unstable();
    Ok((train, held))
}

impl FoldPlan {
    /// Draws every test user's holdout set from `matrix`. Users with fewer
    /// than two items are dropped from the fold's test set with a warning.
    pub fn assign_holdouts(
        &mut self,
        matrix: &InteractionMatrix,
        fraction: f64,
    ) -> Result<(), EvalError> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(EvalError::HoldoutFraction(fraction));
        }
        for fold in &mut self.folds {
            let mut holdouts = Vec::with_capacity(fold.test_users.len());
            let mut kept = Vec::with_capacity(fold.test_users.len());
            for &user in &fold.test_users {
                let seed = rng::derive_seed(
                    self.seed,
                    &[stream::HOLDOUT, fold.index as u64, user as u64],
                );
                match holdout_split(matrix.row(user).items, fraction, seed) {
                    Ok((_, items)) => {
                        kept.push(user);
                        holdouts.push(HeldOut { user, items });
                    }
                    Err(EvalError::TooFewItems(n)) => {
                        log::warn!(
                            "fold {}: user {user} has {n} items, skipped",
                            fold.index
                        );
                    }
                    Err(e) => return Err(e),
                }
            }
            fold.test_users = kept;
            fold.holdouts = holdouts;
        }
        Ok(())
    }
}

impl Fold {
    /// The fold's training matrix: everything except the held-out pairs.
    pub fn training_matrix(&self, matrix: &InteractionMatrix) -> InteractionMatrix {
        let mut held: Vec<Option<&[u32]>> = alloc::vec![None; matrix.n_users()];
        for h in &self.holdouts {
            held[h.user as usize] = Some(&h.items);
        }
        matrix.retain(|u, i| match held[u as usize] {
            Some(items) => items.binary_search(&i).is_err(),
            None => true,
        })
    }
}

#[inline]
fn discount(rank: usize) -> f64 {
    1.0 / libm::log2(rank as f64 + 1.0)
}

/// Binary-gain NDCG of `ranked` against the sorted, duplicate-free
/// `relevant` set.
pub fn ndcg(ranked: &[u32], relevant: &[u32]) -> f64 {
    if relevant.is_empty() || ranked.is_empty() {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .enumerate()
        .filter(|(_, item)| relevant.binary_search(item).is_ok())
        .map(|(i, _)| discount(i + 1))
        .sum();
    let ideal: f64 = (1..=relevant.len().min(ranked.len())).map(discount).sum();
    dcg / ideal
}

/// Reciprocal rank of the first relevant item, or 0.
pub fn mrr(ranked: &[u32], relevant: &[u32]) -> f64 {
    ranked
        .iter()
        .position(|item| relevant.binary_search(item).is_ok())
        .map_or(0.0, |pos| 1.0 / (pos + 1) as f64)
}

/// RBP patience parameter, validated to lie in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Persistence(f64);

impl Persistence {
    pub fn new(p: f64) -> Result<Self, EvalError> {
        if p > 0.0 && p < 1.0 {
            Ok(Self(p))
        } else {
            Err(EvalError::Persistence(p))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Persistence {
    fn default() -> Self {
        Self(0.85)
    }
}

/// Rank-biased precision with binary relevance.
pub fn rbp(ranked: &[u32], relevant: &[u32], persistence: Persistence) -> f64 {
    let gamma = persistence.0;
    let mut weight = 1.0;
    let mut total = 0.0;
    for item in ranked {
        if relevant.binary_search(item).is_ok() {
            total += weight;
        }
        weight *= gamma;
    }
    (1.0 - gamma) * total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub user: u32,
    pub fold: usize,
    pub ndcg: f64,
    pub mrr: f64,
    pub rbp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Ndcg,
    Mrr,
    Rbp,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ndcg, Metric::Mrr, Metric::Rbp];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ndcg => "ndcg",
            Metric::Mrr => "mrr",
            Metric::Rbp => "rbp",
        }
    }
}

impl MetricRow {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Ndcg => self.ndcg,
            Metric::Mrr => self.mrr,
            Metric::Rbp => self.rbp,
        }
    }
}

/// Per-user evaluation results, ordered by (fold, user).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricFrame {
    pub rows: Vec<MetricRow>,
}

impl MetricFrame {
    /// Per-user mean of `metric` across the folds the user was tested in;
    /// `None` for users never evaluated.
    pub fn user_means(&self, metric: Metric, n_users: usize) -> Vec<Option<f64>> {
        let mut sums = alloc::vec![(0.0f64, 0usize); n_users];
        for row in &self.rows {
            let slot = &mut sums[row.user as usize];
            slot.0 += row.get(metric);
            slot.1 += 1;
        }
        sums.into_iter()
            .map(|(s, c)| (c > 0).then(|| s / c as f64))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    /// Recommendation list length.
    pub depth: usize,
    pub filter_train: bool,
    pub persistence: Persistence,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            depth: 1000,
            filter_train: true,
            persistence: Persistence::default(),
        }
    }
}

/// Scores every test user of `fold` with a model trained on
/// `fold.training_matrix(..)`, passed here as `train`.
pub fn evaluate_fold(
    model: &AlsModel,
    fold: &Fold,
    train: &InteractionMatrix,
    config: &EvalConfig,
) -> Vec<MetricRow> {
    let score = |held: &HeldOut| {
        let exclude: &[u32] = if config.filter_train {
            train.row(held.user).items
        } else {
            &[]
        };
        let ranked: Vec<u32> = model
            .recommend(held.user, config.depth, exclude)
            .into_iter()
            .map(|(item, _)| item)
            .collect();
        MetricRow {
            user: held.user,
            fold: fold.index,
            ndcg: ndcg(&ranked, &held.items),
            mrr: mrr(&ranked, &held.items),
            rbp: rbp(&ranked, &held.items, config.persistence),
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        fold.holdouts.par_iter().map(score).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        fold.holdouts.iter().map(score).collect()
    }
}
