//! Additive boosting explainer (main effects only).
//!
//! Every feature is pre-binned; bin 0 is always the missing bin. Boosting
//! cycles through the features in a fixed order and adds a learning-rate
//! fraction of the per-bin mean residual to that feature's shape. Several
//! bags are fit on seeded bootstrap samples with a held-back validation
//! split for early stopping, and their shapes are averaged. Finally each
//! shape is centred on the training distribution, with the offset moved into
//! the intercept.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use thiserror::Error;

use crate::rng::{self, stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EbmError {
    #[error("need at least one feature")]
    NoFeatures,
    #[error("need at least 10 rows, got {0}")]
    TooFewRows(usize),
    #[error("row {row} has {got} features, expected {expected}")]
    RowWidth { row: usize, got: usize, expected: usize },
    #[error("target of row {row} is not finite")]
    NonFiniteTarget { row: usize },
    #[error("invalid boosting configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureValue {
    Numeric(f64),
    Category(String),
    Missing,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Binning {
    /// Strictly increasing cut points; value `x` falls in bin
    /// `1 + #{edges < x}`.
    Numeric { edges: Vec<f64> },
    /// Category `j` falls in bin `1 + j`; unseen categories are missing.
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub name: String,
    pub binning: Binning,
}

/// Quantile cut points over the non-missing values: one candidate cut per
/// `n / max_bins` ranks, placed halfway between neighbouring distinct values
/// and dropped when it would split a tie.
pub fn bin_numeric(values: &[Option<f64>], max_bins: usize) -> Vec<f64> {
    assert!(max_bins >= 2, "max_bins must be at least 2");
    let mut sorted: Vec<f64> = values.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        log::warn!("all values missing; feature reduces to the missing bin");
        return Vec::new();
    }
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges: Vec<f64> = (1..max_bins)
        .map(|j| j * n / max_bins)
        .filter(|&c| c > 0 && c < n && sorted[c - 1] < sorted[c])
        .map(|c| sorted[c - 1] + (sorted[c] - sorted[c - 1]) / 2.0)
        .collect();
    edges.dedup();
    edges
}

impl FeatureSpec {
    pub fn numeric(name: impl Into<String>, values: &[Option<f64>], max_bins: usize) -> Self {
        Self {
            name: name.into(),
            binning: Binning::Numeric {
                edges: bin_numeric(values, max_bins),
            },
        }
    }

    /// Categories sorted, so the binning does not depend on row order.
    pub fn categorical(name: impl Into<String>, values: &[Option<&str>]) -> Self {
        let mut categories: Vec<String> = values.iter().flatten().map(|s| s.to_string()).collect();
        categories.sort();
        categories.dedup();
        Self {
            name: name.into(),
            binning: Binning::Categorical { categories },
        }
    }

    pub fn n_bins(&self) -> usize {
        1 + match &self.binning {
            Binning::Numeric { edges } => edges.len() + 1,
            Binning::Categorical { categories } => categories.len(),
        }
    }

    pub fn bin(&self, value: &FeatureValue) -> usize {
        match (&self.binning, value) {
            (Binning::Numeric { edges }, FeatureValue::Numeric(x)) if x.is_finite() => {
                1 + edges.partition_point(|e| e < x)
            }
            (Binning::Categorical { categories }, FeatureValue::Category(c)) => categories
                .binary_search(c)
                .map_or(0, |j| j + 1),
            _ => 0,
        }
    }

    pub fn bin_label(&self, bin: usize) -> String {
        if bin == 0 {
            return "missing".to_string();
        }
        match &self.binning {
            Binning::Categorical { categories } => categories[bin - 1].clone(),
            Binning::Numeric { edges } => {
                let j = bin - 1;
                match (j.checked_sub(1).map(|p| edges[p]), edges.get(j)) {
                    (None, None) => "all".to_string(),
                    (None, Some(hi)) => format!("<= {hi}"),
                    (Some(lo), Some(hi)) => format!("({lo}, {hi}]"),
                    (Some(lo), None) => format!("> {lo}"),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EbmConfig {
    pub learning_rate: f64,
    pub max_rounds: usize,
    pub bags: usize,
    /// Rounds without validation improvement before a bag stops.
    pub patience: usize,
    pub validation_fraction: f64,
    pub max_bins: usize,
    pub seed: u64,
}

impl Default for EbmConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_rounds: 1000,
            bags: 8,
            patience: 50,
            validation_fraction: 0.15,
            max_bins: 64,
            seed: 42,
        }
    }
}

impl EbmConfig {
    fn validate(&self) -> Result<(), EbmError> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(EbmError::InvalidConfig("learning rate must be in (0, 1]"));
        }
        if self.bags == 0 || self.max_rounds == 0 {
            return Err(EbmError::InvalidConfig("bags and rounds must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(EbmError::InvalidConfig("validation fraction must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Per-bag training diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct BagTrace {
    /// In-bag mean squared error before the first round and after each
    /// completed round.
    pub train_loss: Vec<f64>,
    /// Round whose shapes were kept (0 = intercept only).
    pub best_round: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EbmModel {
    pub intercept: f64,
    pub features: Vec<FeatureSpec>,
    /// `shapes[f][bin]`.
    pub shapes: Vec<Vec<f64>>,
    /// Fraction of training rows in each bin.
    pub bin_mass: Vec<Vec<f64>>,
    /// Mean absolute contribution per feature on the training rows.
    pub importance: Vec<f64>,
    pub config: EbmConfig,
    pub traces: Vec<BagTrace>,
}

struct Binned {
    /// `bins[f][row]`
    bins: Vec<Vec<u16>>,
    n_bins: Vec<usize>,
}

fn bin_rows(rows: &[Vec<FeatureValue>], specs: &[FeatureSpec]) -> Binned {
    Binned {
        bins: specs
            .iter()
            .enumerate()
            .map(|(f, spec)| rows.iter().map(|r| spec.bin(&r[f]) as u16).collect())
            .collect(),
        n_bins: specs.iter().map(FeatureSpec::n_bins).collect(),
    }
}

struct BagFit {
    intercept: f64,
    shapes: Vec<Vec<f64>>,
    trace: BagTrace,
}

fn weighted_mse(targets: &[f64], pred: &[f64], weights: &[f64]) -> f64 {
    let mut sse = 0.0;
    let mut w = 0.0;
    for ((y, p), wi) in targets.iter().zip(pred).zip(weights) {
        if *wi > 0.0 {
            sse += wi * (y - p) * (y - p);
            w += wi;
        }
    }
    if w > 0.0 {
        sse / w
    } else {
        0.0
    }
}

fn fit_bag(binned: &Binned, targets: &[f64], config: &EbmConfig, bag: usize) -> BagFit {
    let n = targets.len();
    let mut rng = rng::rng_for(config.seed, &[stream::EBM_BAG, bag as u64]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = (libm::floor(config.validation_fraction * n as f64) as usize).clamp(1, n - 1);
    let (held, pool) = order.split_at(n_val);
    let mut val_w = vec![0.0; n];
    for &i in held {
        val_w[i] = 1.0;
    }
    let mut train_w = vec![0.0; n];
    for _ in 0..pool.len() {
        train_w[pool[rng.gen_range(0..pool.len())]] += 1.0;
    }

    let w_total: f64 = train_w.iter().sum();
    let intercept = targets.iter().zip(&train_w).map(|(y, w)| y * w).sum::<f64>() / w_total;
    let mut pred = vec![intercept; n];
    let mut shapes: Vec<Vec<f64>> = binned.n_bins.iter().map(|&b| vec![0.0; b]).collect();
    let mut best_shapes = shapes.clone();
    let mut best_val = weighted_mse(targets, &pred, &val_w);
    let mut best_round = 0;
    let mut train_loss = vec![weighted_mse(targets, &pred, &train_w)];

    let mut sums = Vec::new();
    let mut mass = Vec::new();
    for round in 1..=config.max_rounds {
        for (f, column) in binned.bins.iter().enumerate() {
            let nb = binned.n_bins[f];
            sums.clear();
            sums.resize(nb, 0.0);
            mass.clear();
            mass.resize(nb, 0.0);
            for i in 0..n {
                let w = train_w[i];
                if w > 0.0 {
                    let b = column[i] as usize;
                    sums[b] += w * (targets[i] - pred[i]);
                    mass[b] += w;
                }
            }
            let shape = &mut shapes[f];
            for b in 0..nb {
                if mass[b] > 0.0 {
                    sums[b] = config.learning_rate * sums[b] / mass[b];
                    shape[b] += sums[b];
                } else {
                    sums[b] = 0.0;
                }
            }
            for (p, &b) in pred.iter_mut().zip(column) {
                *p += sums[b as usize];
            }
        }
        train_loss.push(weighted_mse(targets, &pred, &train_w));
        let val = weighted_mse(targets, &pred, &val_w);
        if val < best_val {
            best_val = val;
            best_round = round;
            best_shapes.clone_from(&shapes);
        } else if round - best_round >= config.patience {
            break;
        }
    }
    BagFit {
        intercept,
        shapes: best_shapes,
        trace: BagTrace {
            train_loss,
            best_round,
        },
    }
}

/// Fits the additive model to `targets` from `rows`, each row holding one
/// value per spec.
pub fn fit_ebm(
    rows: &[Vec<FeatureValue>],
    targets: &[f64],
    specs: Vec<FeatureSpec>,
    config: EbmConfig,
) -> Result<EbmModel, EbmError> {
    config.validate()?;
    if specs.is_empty() {
        return Err(EbmError::NoFeatures);
    }
    if rows.len() < 10 || rows.len() != targets.len() {
        return Err(EbmError::TooFewRows(rows.len().min(targets.len())));
    }
    if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != specs.len()) {
        return Err(EbmError::RowWidth {
            row,
            got: r.len(),
            expected: specs.len(),
        });
    }
    if let Some(row) = targets.iter().position(|y| !y.is_finite()) {
        return Err(EbmError::NonFiniteTarget { row });
    }
    let binned = bin_rows(rows, &specs);

    let fit = |bag: usize| fit_bag(&binned, targets, &config, bag);
    #[cfg(feature = "parallel")]
    let bags: Vec<BagFit> = {
        use rayon::prelude::*;
        (0..config.bags).into_par_iter().map(fit).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let bags: Vec<BagFit> = (0..config.bags).map(fit).collect();

    let nb = bags.len() as f64;
    let mut intercept = bags.iter().map(|b| b.intercept).sum::<f64>() / nb;
    let mut shapes: Vec<Vec<f64>> = binned.n_bins.iter().map(|&b| vec![0.0; b]).collect();
    for bag in &bags {
        for (acc, s) in shapes.iter_mut().zip(&bag.shapes) {
            for (a, v) in acc.iter_mut().zip(s) {
                *a += v / nb;
            }
        }
    }

    let n = rows.len() as f64;
    let bin_mass: Vec<Vec<f64>> = binned
        .bins
        .iter()
        .zip(&binned.n_bins)
        .map(|(column, &nbins)| {
            let mut m = vec![0.0; nbins];
            for &b in column {
                m[b as usize] += 1.0;
            }
            m.iter_mut().for_each(|v| *v /= n);
            m
        })
        .collect();
    for (shape, mass) in shapes.iter_mut().zip(&bin_mass) {
        let mean: f64 = shape.iter().zip(mass).map(|(s, m)| s * m).sum();
        shape.iter_mut().for_each(|s| *s -= mean);
        intercept += mean;
    }

    let mut model = EbmModel {
        intercept,
        features: specs,
        shapes,
        bin_mass,
        importance: Vec::new(),
        config,
        traces: bags.into_iter().map(|b| b.trace).collect(),
    };
    model.importance = importance(&model, rows);
    Ok(model)
}

/// Mean absolute shape contribution of each feature over `rows`.
pub fn importance(model: &EbmModel, rows: &[Vec<FeatureValue>]) -> Vec<f64> {
    let mut totals = vec![0.0; model.features.len()];
    if rows.is_empty() {
        return totals;
    }
    for row in rows {
        for (f, spec) in model.features.iter().enumerate() {
            totals[f] += model.shapes[f][spec.bin(&row[f])].abs();
        }
    }
    totals.iter_mut().for_each(|t| *t /= rows.len() as f64);
    totals
}

impl EbmModel {
    /// Intercept-only model over `features`.
    pub fn intercept_only(intercept: f64, features: Vec<FeatureSpec>) -> Self {
        let shapes: Vec<Vec<f64>> = features.iter().map(|f| vec![0.0; f.n_bins()]).collect();
        Self {
            intercept,
            importance: vec![0.0; features.len()],
            bin_mass: shapes.clone(),
            shapes,
            features,
            config: EbmConfig::default(),
            traces: Vec::new(),
        }
    }

    /// Contribution of feature `f` for `value`.
    pub fn contribution(&self, f: usize, value: &FeatureValue) -> f64 {
        self.shapes[f][self.features[f].bin(value)]
    }

    pub fn predict(&self, row: &[FeatureValue]) -> f64 {
        self.intercept
            + (0..self.features.len())
                .map(|f| self.contribution(f, &row[f]))
                .sum::<f64>()
    }

    pub fn predict_batch(&self, rows: &[Vec<FeatureValue>]) -> Vec<f64> {
        rows.iter().map(|r| self.predict(r)).collect()
    }

    /// (feature index, importance), most important first; ties keep feature
    /// order.
    pub fn ranked_importance(&self) -> Vec<(usize, f64)> {
        let mut ranked: Vec<(usize, f64)> = self.importance.iter().copied().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }
}
