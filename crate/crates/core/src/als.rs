//! Confidence-weighted alternating least squares for implicit feedback.
//!
//! Every observed (user, item) pair has preference 1 and confidence
//! `1 + alpha * strength`; unobserved pairs have preference 0 and
//! confidence 1. Each half-sweep solves the regularized normal equations of
//! one side exactly, holding the other side fixed, so the objective never
//! increases.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng as _;
use rand::SeedableRng;
use thiserror::Error;

use crate::model::{InteractionMatrix, Row};
use crate::rng::{self, stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlsError {
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparams(&'static str),
    #[error("cannot train on a matrix without interactions")]
    EmptyMatrix,
    #[error("factor shapes do not match the interaction matrix")]
    DimensionMismatch,
    #[error("normal equations for row {row} are not positive definite")]
    Singular { row: usize },
    #[error("non-finite factor after iteration {iteration}")]
    NonFinite { iteration: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlsHyperparams {
    pub factors: usize,
    pub regularization: f64,
    pub iterations: usize,
    /// Confidence scale: `c = 1 + alpha * strength`.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for AlsHyperparams {
    fn default() -> Self {
        Self {
            factors: 50,
            regularization: 0.01,
            iterations: 30,
            alpha: 1.0,
            seed: 42,
        }
    }
}

impl AlsHyperparams {
    pub fn validate(&self) -> Result<(), AlsError> {
        if self.factors == 0 {
            return Err(AlsError::InvalidHyperparams("factors must be positive"));
        }
        if !(self.regularization.is_finite() && self.regularization > 0.0) {
            return Err(AlsError::InvalidHyperparams(
                "regularization must be positive",
            ));
        }
        if self.iterations == 0 {
            return Err(AlsError::InvalidHyperparams("iterations must be positive"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(AlsError::InvalidHyperparams("alpha must be positive"));
        }
        Ok(())
    }
}

/// Dense row-major `rows x k` matrix of latent factors.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    rows: usize,
    k: usize,
    data: Vec<f64>,
}

impl Factors {
    pub fn zeros(rows: usize, k: usize) -> Self {
        Self {
            rows,
            k,
            data: vec![0.0; rows * k],
        }
    }

    pub fn from_vec(rows: usize, k: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == rows * k).then_some(Self { rows, k, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.k..(r + 1) * self.k]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.k..(r + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `Σ_r f_r f_rᵀ` as a dense `k x k` matrix. Rows are reduced in fixed
    /// blocks whose partial sums are added in block order, so the result does
    /// not depend on the thread count.
    pub fn gram(&self) -> Vec<f64> {
        const BLOCK: usize = 1024;
        let k = self.k;
        let partial = |block: &[f64]| {
            let mut g = vec![0.0; k * k];
            for f in block.chunks_exact(k) {
                for a in 0..k {
                    let fa = f[a];
                    for b in a..k {
                        g[a * k + b] += fa * f[b];
                    }
                }
            }
            g
        };
        #[cfg(feature = "parallel")]
        let partials: Vec<Vec<f64>> = {
            use rayon::prelude::*;
            self.data.par_chunks(BLOCK * k).map(partial).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let partials: Vec<Vec<f64>> = self.data.chunks(BLOCK * k.max(1)).map(partial).collect();
        let mut g = vec![0.0; k * k];
        for p in partials {
            for (acc, v) in g.iter_mut().zip(p) {
                *acc += v;
            }
        }
        for a in 0..k {
            for b in 0..a {
                g[a * k + b] = g[b * k + a];
            }
        }
        g
    }
}

/// i.i.d. uniform entries in `[0, 0.01)`, deterministic in `seed`.
pub fn init_factors(n: usize, k: usize, seed: u64) -> Factors {
    let mut rng = rng::Rng::seed_from_u64(seed);
    let data = (0..n * k).map(|_| rng.gen::<f64>() * 0.01).collect();
    Factors { rows: n, k, data }
}

#[inline]
pub fn confidence(strength: f64, alpha: f64) -> f64 {
    1.0 + alpha * strength
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Users,
    Items,
}

/// Interactions in both orientations, built once per training run.
#[derive(Debug, Clone)]
pub struct Interactions {
    pub by_user: InteractionMatrix,
    pub by_item: InteractionMatrix,
}

impl Interactions {
    pub fn new(matrix: &InteractionMatrix) -> Self {
        Self {
            by_user: matrix.clone(),
            by_item: matrix.transpose(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlsModel {
    pub user_factors: Factors,
    pub item_factors: Factors,
    pub hyperparams: AlsHyperparams,
}

struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Scratch {
    fn new(k: usize) -> Self {
        Self {
            a: vec![0.0; k * k],
            b: vec![0.0; k],
        }
    }
}

/// In-place Cholesky solve of the SPD system `a x = b`; `b` is overwritten
/// with `x`. Returns false if `a` is not positive definite.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], k: usize) -> bool {
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        if d.is_nan() || d <= 0.0 {
            return false;
        }
        let d = libm::sqrt(d);
        a[j * k + j] = d;
        for i in j + 1..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = s / d;
        }
    }
    // forward: L z = b
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= a[i * k + p] * b[p];
        }
        b[i] = s / a[i * k + i];
    }
    // backward: Lᵀ x = z
    for i in (0..k).rev() {
        let mut s = b[i];
        for p in i + 1..k {
            s -= a[p * k + i] * b[p];
        }
        b[i] = s / a[i * k + i];
    }
    true
}

fn solve_row(
    gram: &[f64],
    regularization: f64,
    alpha: f64,
    others: &Factors,
    row: Row<'_>,
    out: &mut [f64],
    scratch: &mut Scratch,
) -> bool {
    let k = out.len();
    if row.is_empty() {
        // zero right-hand side with an SPD system
        out.iter_mut().for_each(|v| *v = 0.0);
        return true;
    }
    let Scratch { a, b } = scratch;
    a.copy_from_slice(gram);
    for d in 0..k {
        a[d * k + d] += regularization;
    }
    b.iter_mut().for_each(|v| *v = 0.0);
    for (j, strength) in row.iter() {
        let y = others.row(j as usize);
        let c = confidence(strength, alpha);
        let extra = c - 1.0;
        for p in 0..k {
            let yp = y[p];
            b[p] += c * yp;
            let w = extra * yp;
            // cholesky_solve reads only the lower triangle
            for q in 0..=p {
                a[p * k + q] += w * y[q];
            }
        }
    }
    if !cholesky_solve(a, b, k) {
        return false;
    }
    out.copy_from_slice(b);
    true
}

/// Applies `solve` to every row of `factors`; returns the smallest failing
/// row index, if any.
fn for_each_row<F>(factors: &mut Factors, solve: F) -> Option<usize>
where
    F: Fn(usize, &mut [f64], &mut Scratch) -> bool + Sync,
{
    let k = factors.k;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        factors
            .data
            .par_chunks_mut(k)
            .enumerate()
            .map_init(
                || Scratch::new(k),
                |scratch, (r, out)| (!solve(r, out, scratch)).then_some(r),
            )
            .flatten()
            .min()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut scratch = Scratch::new(k);
        factors
            .data
            .chunks_mut(k)
            .enumerate()
            .filter_map(|(r, out)| (!solve(r, out, &mut scratch)).then_some(r))
            .min()
    }
}

impl AlsModel {
    pub fn init(n_users: usize, n_items: usize, hyperparams: AlsHyperparams) -> Self {
        let k = hyperparams.factors;
        Self {
            user_factors: init_factors(
                n_users,
                k,
                rng::derive_seed(hyperparams.seed, &[stream::USER_FACTORS]),
            ),
            item_factors: init_factors(
                n_items,
                k,
                rng::derive_seed(hyperparams.seed, &[stream::ITEM_FACTORS]),
            ),
            hyperparams,
        }
    }

    fn check_dims(&self, m: &InteractionMatrix) -> Result<(), AlsError> {
        if self.user_factors.rows != m.n_users()
            || self.item_factors.rows != m.n_items()
            || self.user_factors.k != self.item_factors.k
        {
            return Err(AlsError::DimensionMismatch);
        }
        Ok(())
    }

    /// Re-solves every row on `side` against the fixed opposite side.
    pub fn half_sweep(&mut self, side: Side, data: &Interactions) -> Result<(), AlsError> {
        self.check_dims(&data.by_user)?;
        let AlsHyperparams {
            regularization,
            alpha,
            ..
        } = self.hyperparams;
        let (target, others, rows) = match side {
            Side::Users => (&mut self.user_factors, &self.item_factors, &data.by_user),
            Side::Items => (&mut self.item_factors, &self.user_factors, &data.by_item),
        };
        let gram = others.gram();
        let failed = for_each_row(target, |r, out, scratch| {
            solve_row(
                &gram,
                regularization,
                alpha,
                others,
                rows.row(r as u32),
                out,
                scratch,
            )
        });
        match failed {
            Some(row) => Err(AlsError::Singular { row }),
            None => Ok(()),
        }
    }

    pub fn score(&self, user: u32, item: u32) -> f64 {
        dot(
            self.user_factors.row(user as usize),
            self.item_factors.row(item as usize),
        )
    }

    /// Top-`n` items for `user` by descending score, skipping `exclude`.
    /// Ties go to the lower item index.
    pub fn recommend(&self, user: u32, n: usize, exclude: &[u32]) -> Vec<(u32, f64)> {
        let n_items = self.item_factors.rows;
        let mut excluded = vec![false; n_items];
        for &i in exclude {
            if let Some(slot) = excluded.get_mut(i as usize) {
                *slot = true;
            }
        }
        let x = self.user_factors.row(user as usize);
        let mut scored: Vec<(u32, f64)> = (0..n_items)
            .filter(|&i| !excluded[i])
            .map(|i| (i as u32, dot(x, self.item_factors.row(i))))
            .collect();
        let by_rank = |a: &(u32, f64), b: &(u32, f64)| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then(a.0.cmp(&b.0))
        };
        if n == 0 {
            return Vec::new();
        }
        if n < scored.len() {
            scored.select_nth_unstable_by(n - 1, by_rank);
            scored.truncate(n);
        }
        scored.sort_unstable_by(by_rank);
        scored
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trains from the seeded initialization, alternating item then user
/// half-sweeps for `hyperparams.iterations` rounds.
pub fn fit(interactions: &InteractionMatrix, hyperparams: AlsHyperparams) -> Result<AlsModel, AlsError> {
    hyperparams.validate()?;
    if interactions.nnz() == 0 {
        return Err(AlsError::EmptyMatrix);
    }
    let data = Interactions::new(interactions);
    let mut model = AlsModel::init(interactions.n_users(), interactions.n_items(), hyperparams);
    for iteration in 0..hyperparams.iterations {
        model.half_sweep(Side::Items, &data)?;
        model.half_sweep(Side::Users, &data)?;
        if !(model.user_factors.is_finite() && model.item_factors.is_finite()) {
            return Err(AlsError::NonFinite { iteration });
        }
    }
    Ok(model)
}

/// Full weighted objective over every user-item pair plus the L2 penalty.
///
/// Uses `Σ_{u,i} (x_u·y_i)² = Σ_u x_uᵀ (YᵀY) x_u` for the unobserved part, so
/// the cost is linear in the number of interactions.
pub fn loss(model: &AlsModel, interactions: &InteractionMatrix) -> f64 {
    let AlsHyperparams {
        regularization,
        alpha,
        ..
    } = model.hyperparams;
    let users = &model.user_factors;
    let items = &model.item_factors;
    let k = users.k;
    let gram = items.gram();
    let mut total = 0.0;
    for u in 0..users.rows {
        let x = users.row(u);
        let mut quad = 0.0;
        for a in 0..k {
            quad += x[a] * dot(&gram[a * k..(a + 1) * k], x);
        }
        total += quad;
    }
    for (u, i, strength) in interactions.entries() {
        let s = dot(users.row(u as usize), items.row(i as usize));
        let c = confidence(strength, alpha);
        total += c * (1.0 - s) * (1.0 - s) - s * s;
    }
    let norm = |f: &Factors| f.data.iter().map(|v| v * v).sum::<f64>();
    total + regularization * (norm(users) + norm(items))
}
