//! Dataset loading and the cross-validated train/evaluate loop.

use std::collections::HashSet;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::time::Instant;

use log::info;
use rand::seq::index;
use recaudit_core::als::{self, AlsError};
use recaudit_core::evaluation::{self, make_folds, EvalError};
use recaudit_core::model::remove_light_users;
use recaudit_core::rng;
use recaudit_core::{
    popindex, AlsModel, Dataset, DatasetStats, FoldPlan, GdpTable, MetricFrame, RawDataset,
};
use serde::Serialize;

use crate::config::{AuditConfig, DatasetKind};
use crate::error::{AuditError, Result, Stage};
use crate::ingest::{self, LineReport};
use crate::synthetic;

/// Stream tag for the optional user downsample.
const DOWNSAMPLE: u64 = 16;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestSummary {
    pub provenance: String,
    pub interactions: LineReport,
    pub profiles: LineReport,
    pub gdp: Option<LineReport>,
    pub cold_start_removed: usize,
    /// User count before downsampling, when it happened.
    pub downsampled_from: Option<usize>,
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    pub sparsity: f64,
}

impl IngestSummary {
    fn set_stats(&mut self, s: DatasetStats) {
        self.n_users = s.n_users;
        self.n_items = s.n_items;
        self.n_interactions = s.n_interactions;
        self.sparsity = s.sparsity;
    }
}

pub struct LoadedData {
    pub dataset: Dataset,
    pub gdp: Option<GdpTable>,
    pub summary: IngestSummary,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| AuditError::io(Stage::Ingest, path, e))
}

fn ingest_err(path: &Path, e: ingest::IngestError) -> AuditError {
    AuditError::data(Stage::Ingest, format!("{}: {e}", path.display()))
}

fn required<'a>(path: &'a Option<std::path::PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| AuditError::config(format!("dataset.{key} is not set")))
}

/// Parses the configured dataset without any filtering.
pub fn read_raw(config: &AuditConfig) -> Result<(RawDataset, IngestSummary)> {
    let d = &config.dataset;
    let mut summary = IngestSummary {
        provenance: d.kind.provenance().name().to_string(),
        ..IngestSummary::default()
    };
    let raw = match d.kind {
        DatasetKind::Synthetic => synthetic::generate(&config.synthetic)?,
        DatasetKind::Lfm360k => {
            let ip = required(&d.interactions, "interactions")?;
            let up = required(&d.users, "users")?;
            let (triples, ir) =
                ingest::parse_lfm_interactions(open(ip)?).map_err(|e| ingest_err(ip, e))?;
            let (attributes, pr) =
                ingest::parse_lfm_profiles(open(up)?).map_err(|e| ingest_err(up, e))?;
            summary.interactions = ir;
            summary.profiles = pr;
            RawDataset {
                triples,
                attributes,
                provenance: d.kind.provenance(),
            }
        }
        DatasetKind::Ml1m => {
            let ip = required(&d.interactions, "interactions")?;
            let up = required(&d.users, "users")?;
            let (triples, ir) =
                ingest::parse_ml1m_ratings(open(ip)?).map_err(|e| ingest_err(ip, e))?;
            let (attributes, pr) =
                ingest::parse_ml1m_users(open(up)?).map_err(|e| ingest_err(up, e))?;
            summary.interactions = ir;
            summary.profiles = pr;
            RawDataset {
                triples,
                attributes,
                provenance: d.kind.provenance(),
            }
        }
    };
    if summary.interactions.lines == 0 {
        summary.interactions.lines = raw.triples.len();
        summary.profiles.lines = raw.attributes.len();
    }
    Ok((raw, summary))
}

/// Keeps `n` users chosen uniformly at random, in first-seen order.
pub fn downsample(raw: RawDataset, n: usize, seed: u64) -> (RawDataset, usize) {
    let mut seen = HashSet::new();
    let users: Vec<&str> = raw
        .triples
        .iter()
        .map(|t| t.0.as_str())
        .filter(|u| seen.insert(*u))
        .collect();
    let total = users.len();
    if n >= total {
        return (raw, total);
    }
    let mut r = rng::rng_for(seed, &[DOWNSAMPLE]);
    let mut picked = index::sample(&mut r, total, n).into_vec();
    picked.sort_unstable();
    let keep: HashSet<String> = picked.into_iter().map(|i| users[i].to_string()).collect();
    let RawDataset {
        triples,
        attributes,
        provenance,
    } = raw;
    (
        RawDataset {
            triples: triples.into_iter().filter(|t| keep.contains(&t.0)).collect(),
            attributes: attributes
                .into_iter()
                .filter(|a| keep.contains(&a.user_id))
                .collect(),
            provenance,
        },
        total,
    )
}

/// Ingest, cold-start filter, optional downsample, indexing, and the usage
/// and pop-index annotations (computed on the full filtered matrix).
pub fn load(config: &AuditConfig) -> Result<LoadedData> {
    let started = Instant::now();
    let (mut raw, mut summary) = read_raw(config)?;
    if let Some(threshold) = raw.provenance.cold_start_threshold() {
        let (filtered, removed) = remove_light_users(raw, threshold);
        raw = filtered;
        summary.cold_start_removed = removed;
    }
    if let Some(n) = config.dataset.max_users {
        let (sampled, total) = downsample(raw, n, config.dataset.sample_seed);
        raw = sampled;
        if n < total {
            summary.downsampled_from = Some(total);
        }
    }
    let mut dataset = Dataset::from_raw(raw);
    if dataset.matrix.nnz() == 0 {
        return Err(AuditError::data(Stage::Ingest, "no interactions left after cleanup"));
    }
    popindex::annotate(&mut dataset);
    let mut stats = dataset.matrix.stats();
    if config.dataset.kind == DatasetKind::Ml1m {
        // ML1M statistics count the whole movie id range, rated or not
        let id_space = dataset.items.ids().iter().filter_map(|id| id.parse::<usize>().ok()).max();
        if let Some(m) = id_space.filter(|&m| m > stats.n_items) {
            stats = DatasetStats::new(stats.n_users, m, stats.n_interactions);
        }
    }
    summary.set_stats(stats);

    let gdp = match &config.dataset.gdp {
        Some(path) => {
            let (table, report) = ingest::load_gdp_table(open(path)?).map_err(|e| ingest_err(path, e))?;
            summary.gdp = Some(report);
            Some(table)
        }
        None => None,
    };
    info!(
        "loaded {} users, {} items, {} interactions in {:.1?}",
        summary.n_users,
        summary.n_items,
        summary.n_interactions,
        started.elapsed()
    );
    Ok(LoadedData {
        dataset,
        gdp,
        summary,
    })
}

fn als_err(stage: Stage, e: AlsError) -> AuditError {
    match e {
        AlsError::InvalidHyperparams(_) => AuditError::config(e),
        AlsError::EmptyMatrix | AlsError::DimensionMismatch => AuditError::data(stage, e),
        AlsError::Singular { .. } | AlsError::NonFinite { .. } => AuditError::numerical(stage, e),
    }
}

fn eval_err(e: EvalError) -> AuditError {
    match e {
        EvalError::Persistence(_) | EvalError::HoldoutFraction(_) | EvalError::NoFolds => {
            AuditError::config(e)
        }
        _ => AuditError::data(Stage::Folds, e),
    }
}

/// Seed of the model trained for `fold`.
pub fn fold_seed(als_seed: u64, fold: usize) -> u64 {
    rng::derive_seed(als_seed, &[fold as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldRun {
    pub index: usize,
    pub model_seed: u64,
    pub test_users: usize,
    pub train_interactions: usize,
}

pub struct EvaluationRun {
    pub plan: FoldPlan,
    pub frame: MetricFrame,
    pub folds: Vec<FoldRun>,
}

/// Cross-validated evaluation. Folds run one after another; the work inside
/// each (row solves, per-user ranking) uses the current rayon pool.
pub fn evaluate(dataset: &Dataset, config: &AuditConfig) -> Result<EvaluationRun> {
    let eval_config = config.evaluation.eval_config()?;
    let users: Vec<u32> = (0..dataset.n_users() as u32).collect();
    let scheme = config.folds.scheme_for(config.dataset.kind);
    let mut plan = make_folds(&users, config.folds.k, scheme, config.folds.seed).map_err(eval_err)?;
    plan.assign_holdouts(&dataset.matrix, config.evaluation.holdout_fraction)
        .map_err(eval_err)?;

    let mut frame = MetricFrame::default();
    let mut folds = Vec::with_capacity(plan.folds.len());
    for fold in &plan.folds {
        let started = Instant::now();
        let train = fold.training_matrix(&dataset.matrix);
        let hp = als::AlsHyperparams {
            seed: fold_seed(config.als.seed, fold.index),
            ..config.als.hyperparams()
        };
        let model = als::fit(&train, hp).map_err(|e| als_err(Stage::Train, e))?;
        let rows = evaluation::evaluate_fold(&model, fold, &train, &eval_config);
        info!(
            "fold {}: {} users evaluated in {:.1?}",
            fold.index,
            rows.len(),
            started.elapsed()
        );
        frame.rows.extend(rows);
        folds.push(FoldRun {
            index: fold.index,
            model_seed: hp.seed,
            test_users: fold.test_users.len(),
            train_interactions: train.nnz(),
        });
    }
    Ok(EvaluationRun { plan, frame, folds })
}

/// Fits one model on every interaction, for the `train` command.
pub fn train_full(dataset: &Dataset, config: &AuditConfig) -> Result<AlsModel> {
    als::fit(&dataset.matrix, config.als.hyperparams()).map_err(|e| als_err(Stage::Train, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SyntheticConfig;

    fn small() -> AuditConfig {
        let mut c = AuditConfig {
            synthetic: SyntheticConfig {
                users: 120,
                items: 80,
                min_items: 10,
                max_items: 30,
                ..SyntheticConfig::default()
            },
            ..AuditConfig::default()
        };
        c.als.factors = 6;
        c.als.iterations = 3;
        c.evaluation.depth = 50;
        c
    }

    #[test]
    fn synthetic_load_annotates_users() {
        let data = load(&small()).unwrap();
        assert_eq!(data.dataset.n_users(), 120);
        assert_eq!(data.summary.cold_start_removed, 0);
        assert!(data.dataset.attributes.iter().all(|a| a.usage.is_some() && a.pop_index.is_some()));
        assert_eq!(data.summary.n_interactions, data.dataset.matrix.nnz());
    }

    #[test]
    fn downsample_keeps_requested_users() {
        let mut c = small();
        c.dataset.max_users = Some(50);
        let data = load(&c).unwrap();
        assert_eq!(data.dataset.n_users(), 50);
        assert_eq!(data.summary.downsampled_from, Some(120));
        let again = load(&c).unwrap();
        assert_eq!(again.dataset.users.ids(), data.dataset.users.ids());
    }

    #[test]
    fn partition_evaluates_every_user_once() {
        let c = small();
        let data = load(&c).unwrap();
        let run = evaluate(&data.dataset, &c).unwrap();
        assert_eq!(run.frame.rows.len(), 120);
        assert_eq!(run.folds.len(), 5);
        let mut users: Vec<u32> = run.frame.rows.iter().map(|r| r.user).collect();
        users.sort_unstable();
        users.dedup();
        assert_eq!(users.len(), 120);
        assert!(run.frame.rows.iter().all(|r| (0.0..=1.0).contains(&r.ndcg)));
    }

    #[test]
    fn oversized_sample_is_a_data_error() {
        let mut c = small();
        c.folds.scheme = Some(crate::config::FoldSchemeKind::Sample);
        let data = load(&c).unwrap();
        let err = evaluate(&data.dataset, &c).err().unwrap();
        assert_eq!(err.exit_code(), 3);
        assert_eq!(err.stage, Stage::Folds);
    }
}
