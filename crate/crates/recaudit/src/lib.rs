//! Ingest, orchestration, report files and CLI plumbing for the recommender
//! utility audit. The algorithms live in `recaudit-core`.
//!
//! An audit loads a dataset, trains one implicit ALS model per
//! cross-validation fold, scores every test user with NDCG, MRR and RBP, then
//! compares user groups with Kruskal-Wallis tests and an additive boosting
//! model. [`run_audit`] does all of it and writes the results atomically to
//! the configured output directory.

pub mod charts;
pub mod config;
pub mod error;
pub mod ingest;
pub mod output;
pub mod pipeline;
pub mod report;
pub mod synthetic;

use std::fs;
use std::path::{Path, PathBuf};

use recaudit_core::UserAttributes;
use serde_json::json;

pub use config::AuditConfig;
pub use error::{AuditError, Result, Stage};
pub use report::AuditReport;

use output::Staging;
use pipeline::{EvaluationRun, IngestSummary, LoadedData};
use report::ReportOptions;

pub struct AuditOutcome {
    pub dir: PathBuf,
    pub report: AuditReport,
    pub summary: IngestSummary,
}

pub fn report_options(config: &AuditConfig) -> ReportOptions {
    ReportOptions {
        threshold: config.stats.threshold,
        ebm: config.ebm.ebm_config(),
        balanced: config.ebm.balanced,
    }
}

/// Loads and cleans the dataset and reports its statistics.
pub fn ingest_stats(config: &AuditConfig) -> Result<IngestSummary> {
    config.validate()?;
    Ok(pipeline::load(config)?.summary)
}

fn seeds_json(config: &AuditConfig, run: Option<&EvaluationRun>, report: Option<&AuditReport>) -> serde_json::Value {
    let mut seeds = json!({
        "folds": config.folds.seed,
        "holdout": "derive_seed(folds, [4, fold, user])",
        "als": config.als.seed,
        "ebm": config.ebm.seed,
    });
    if config.dataset.kind == config::DatasetKind::Synthetic {
        seeds["synthetic"] = json!(config.synthetic.seed);
    }
    if config.dataset.max_users.is_some() {
        seeds["downsample"] = json!(config.dataset.sample_seed);
    }
    if let Some(run) = run {
        seeds["fold_models"] = json!(run.folds.iter().map(|f| f.model_seed).collect::<Vec<_>>());
    }
    if let Some(report) = report {
        let runs: Vec<_> = report
            .ebm
            .iter()
            .map(|r| json!({ "name": r.name, "seed": r.model.config.seed, "balanced": r.balanced }))
            .collect();
        seeds["ebm_runs"] = json!(runs);
        seeds["ebm_balance"] = json!("derive_seed(ebm, [group])");
    }
    seeds
}

fn write_evaluation(staging: &Staging, data: &LoadedData, run: &EvaluationRun) -> Result<Vec<String>> {
    output::write_metrics(&staging.path("metrics.csv")?, &run.frame, &data.dataset.attributes)?;
    Ok(vec!["metrics.csv".to_string()])
}

fn write_report(staging: &Staging, users: &[UserAttributes], report: &AuditReport) -> Result<Vec<String>> {
    let mut files = vec!["users.csv".to_string()];
    output::write_users(&staging.path("users.csv")?, users, Some(report))?;
    files.extend(output::emit_tables(staging, report)?);
    for s in &report.schemes {
        let name = format!("charts/{}.svg", s.scheme.name);
        let svg = charts::scheme_chart(report, s);
        match output::write_text(&staging.path(&name)?, &svg) {
            Ok(()) => files.push(name),
            Err(e) => log::warn!("chart {name}: {e}"),
        }
    }
    Ok(files)
}

fn write_manifest(
    staging: &Staging,
    config: &AuditConfig,
    summary: &IngestSummary,
    run: &EvaluationRun,
    report: Option<&AuditReport>,
    mut files: Vec<String>,
) -> Result<()> {
    files.push("manifest.json".into());
    files.sort();
    let text = output::manifest(
        &config.to_toml(),
        serde_json::to_value(summary).expect("summary serializes"),
        seeds_json(config, Some(run), report),
        serde_json::to_value(&run.folds).expect("folds serialize"),
        &files,
    );
    output::write_text(&staging.path("manifest.json")?, &text)
}

/// Cross-validated evaluation only: `metrics.csv`, `users.csv` and the
/// manifest.
pub fn run_evaluate(config: &AuditConfig) -> Result<PathBuf> {
    config.validate()?;
    let data = pipeline::load(config)?;
    let run = pipeline::evaluate(&data.dataset, config)?;
    let staging = Staging::new(&config.output.dir)?;
    let mut files = write_evaluation(&staging, &data, &run)?;
    output::write_users(&staging.path("users.csv")?, &data.dataset.attributes, None)?;
    files.push("users.csv".into());
    write_manifest(&staging, config, &data.summary, &run, None, files)?;
    staging.commit()
}

/// The full pipeline: evaluation, tests, EBM runs, tables and charts.
pub fn run_audit(config: &AuditConfig) -> Result<AuditOutcome> {
    config.validate()?;
    let data = pipeline::load(config)?;
    let run = pipeline::evaluate(&data.dataset, config)?;
    let schemes = config.schemes(data.gdp.is_some())?;
    let report = report::build_report(
        &data.dataset.attributes,
        &run.frame,
        &schemes,
        data.gdp.as_ref(),
        &report_options(config),
    )?;
    let staging = Staging::new(&config.output.dir)?;
    let mut files = write_evaluation(&staging, &data, &run)?;
    files.extend(write_report(&staging, &data.dataset.attributes, &report)?);
    write_manifest(&staging, config, &data.summary, &run, Some(&report), files)?;
    let dir = staging.commit()?;
    Ok(AuditOutcome {
        dir,
        report,
        summary: data.summary,
    })
}

/// Re-renders every report file in `dir` from its `metrics.csv` and
/// `users.csv`.
pub fn run_report(config: &AuditConfig, dir: &Path) -> Result<AuditReport> {
    config.validate()?;
    let users = output::read_users(&dir.join("users.csv"))?;
    let frame = output::read_metrics(&dir.join("metrics.csv"), &users)?;
    let gdp = match &config.dataset.gdp {
        Some(path) => {
            let file = fs::File::open(path).map_err(|e| AuditError::io(Stage::Ingest, path, e))?;
            let (table, _) = ingest::load_gdp_table(file)
                .map_err(|e| AuditError::data(Stage::Ingest, format!("{}: {e}", path.display())))?;
            Some(table)
        }
        None => None,
    };
    let schemes = config.schemes(gdp.is_some())?;
    let report = report::build_report(&users, &frame, &schemes, gdp.as_ref(), &report_options(config))?;

    let staging = Staging::new(dir)?;
    let metrics = staging.path("metrics.csv")?;
    fs::copy(dir.join("metrics.csv"), &metrics).map_err(|e| AuditError::io(Stage::Output, &metrics, e))?;
    let mut files = vec!["metrics.csv".to_string()];
    files.extend(write_report(&staging, &users, &report)?);
    files.push("manifest.json".into());
    files.sort();
    let mut manifest = fs::read_to_string(dir.join("manifest.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .unwrap_or_else(|| json!({}));
    manifest["files"] = json!(files);
    manifest["report_config_sha256"] = json!(output::sha256_hex(&config.to_toml()));
    manifest["seeds"]["ebm_runs"] = seeds_json(config, None, Some(&report))["ebm_runs"].clone();
    let text = serde_json::to_string_pretty(&manifest).expect("json serializes") + "\n";
    output::write_text(&staging.path("manifest.json")?, &text)?;
    staging.commit()?;
    Ok(report)
}

/// Fits one model on all interactions and writes `factors.csv`.
pub fn run_train(config: &AuditConfig) -> Result<PathBuf> {
    config.validate()?;
    let data = pipeline::load(config)?;
    let model = pipeline::train_full(&data.dataset, config)?;
    let staging = Staging::new(&config.output.dir)?;
    output::write_factors(&staging.path("factors.csv")?, &model)?;
    output::write_text(
        &staging.path("factor_ids.csv")?,
        &id_listing(&data.dataset),
    )?;
    staging.commit()
}

/// `side,index,id` rows mapping factor rows back to dataset ids.
fn id_listing(dataset: &recaudit_core::Dataset) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["side", "index", "id"]).expect("in-memory write");
    for (side, ids) in [("user", dataset.users.ids()), ("item", dataset.items.ids())] {
        for (i, id) in ids.iter().enumerate() {
            w.write_record([side, &i.to_string(), id]).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 ids")
}
