//! Output files. Everything is written into a staging directory next to the
//! target and renamed into place only after the whole run succeeds.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use recaudit_core::{AlsModel, EbmModel, Gender, Metric, MetricFrame, MetricRow, UserAttributes};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{AuditError, Result, Stage};
use crate::report::{AuditReport, CrossTab, TestOutcome};

fn out_err(path: &Path, e: impl std::fmt::Display) -> AuditError {
    AuditError::data(Stage::Output, format!("{}: {e}", path.display()))
}

/// Directory that replaces `target` on [`Staging::commit`] and is removed if
/// dropped before that.
pub struct Staging {
    dir: PathBuf,
    target: PathBuf,
    committed: bool,
}

impl Staging {
    pub fn new(target: &Path) -> Result<Self> {
        let name = target
            .file_name()
            .ok_or_else(|| AuditError::config(format!("bad output dir {}", target.display())))?
            .to_string_lossy();
        let dir = target.with_file_name(format!(".{name}.partial-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| out_err(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| out_err(&dir, e))?;
        Ok(Self {
            dir,
            target: target.to_path_buf(),
            committed: false,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Path of `name` inside the staging directory, creating parents.
    pub fn path(&self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| out_err(parent, e))?;
        }
        Ok(p)
    }

    pub fn commit(mut self) -> Result<PathBuf> {
        if self.target.exists() {
            let old = self.target.with_file_name(format!(
                ".{}.old-{}",
                self.target.file_name().unwrap().to_string_lossy(),
                std::process::id()
            ));
            fs::rename(&self.target, &old).map_err(|e| out_err(&self.target, e))?;
            fs::rename(&self.dir, &self.target).map_err(|e| out_err(&self.target, e))?;
            fs::remove_dir_all(&old).map_err(|e| out_err(&old, e))?;
        } else {
            if let Some(parent) = self.target.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| out_err(parent, e))?;
            }
            fs::rename(&self.dir, &self.target).map_err(|e| out_err(&self.target, e))?;
        }
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| out_err(path, e))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| out_err(path, e))
}

/// Shortest round-trip form; scientific notation for very small or large
/// magnitudes.
pub fn num(v: f64) -> String {
    if v != 0.0 && v.is_finite() && !(1e-4..1e15).contains(&v.abs()) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| out_err(path, e))
}

/// `user_id,fold,ndcg,mrr,rbp` with shortest round-trip float formatting.
pub fn write_metrics(path: &Path, frame: &MetricFrame, users: &[UserAttributes]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = |err| out_err(path, err);
    w.write_record(["user_id", "fold", "ndcg", "mrr", "rbp"]).map_err(e)?;
    for r in &frame.rows {
        w.write_record([
            users[r.user as usize].user_id.clone(),
            r.fold.to_string(),
            num(r.ndcg),
            num(r.mrr),
            num(r.rbp),
        ])
        .map_err(e)?;
    }
    finish(w, path)
}

const USER_COLUMNS: [&str; 6] = ["user_id", "gender", "age", "country", "usage", "pop_index"];

/// Per-user attributes, followed by one label column per scheme.
pub fn write_users(path: &Path, users: &[UserAttributes], report: Option<&AuditReport>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = |err| out_err(path, err);
    let schemes = report.map(|r| r.schemes.as_slice()).unwrap_or_default();
    let mut header: Vec<String> = USER_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(schemes.iter().map(|s| format!("group:{}", s.scheme.name)));
    w.write_record(&header).map_err(e)?;
    for (u, a) in users.iter().enumerate() {
        let mut rec = vec![
            a.user_id.clone(),
            a.gender.label().unwrap_or_default().to_string(),
            opt(a.age),
            a.country.clone().unwrap_or_default(),
            opt(a.usage),
            opt(a.pop_index),
        ];
        rec.extend(schemes.iter().map(|s| s.assignment.label_of(u as u32).to_string()));
        w.write_record(&rec).map_err(e)?;
    }
    finish(w, path)
}

pub fn read_users(path: &Path) -> Result<Vec<UserAttributes>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| out_err(path, e))?;
    let header = r.headers().map_err(|e| out_err(path, e))?.clone();
    if header.iter().take(USER_COLUMNS.len()).ne(USER_COLUMNS) {
        return Err(out_err(path, "unexpected users.csv header"));
    }
    let mut users = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| out_err(path, e))?;
        let bad = |field: &str| out_err(path, format!("row {}: bad {field}", i + 2));
        let num = |j: usize, field: &str| -> Result<Option<u64>> {
            match rec.get(j).unwrap_or("") {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(field)),
            }
        };
        users.push(UserAttributes {
            gender: Gender::parse(rec.get(1).unwrap_or("")),
            age: num(2, "age")?.map(|v| v as u32),
            country: rec.get(3).filter(|s| !s.is_empty()).map(String::from),
            usage: num(4, "usage")?,
            pop_index: num(5, "pop_index")?.map(|v| v as u8),
            ..UserAttributes::new(rec.get(0).unwrap_or(""))
        });
    }
    Ok(users)
}

/// Reads `metrics.csv` back into a frame indexed like `users`.
pub fn read_metrics(path: &Path, users: &[UserAttributes]) -> Result<MetricFrame> {
    let index: HashMap<&str, u32> = users
        .iter()
        .enumerate()
        .map(|(i, a)| (a.user_id.as_str(), i as u32))
        .collect();
    let mut r = csv::Reader::from_path(path).map_err(|e| out_err(path, e))?;
    let mut frame = MetricFrame::default();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| out_err(path, e))?;
        let bad = || out_err(path, format!("row {}: malformed", i + 2));
        let f = |j: usize| -> Result<f64> { rec.get(j).and_then(|s| s.parse().ok()).ok_or_else(bad) };
        frame.rows.push(MetricRow {
            user: *index.get(rec.get(0).unwrap_or("")).ok_or_else(|| {
                out_err(path, format!("row {}: user not in users.csv", i + 2))
            })?,
            fold: rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
            ndcg: f(2)?,
            mrr: f(3)?,
            rbp: f(4)?,
        });
    }
    Ok(frame)
}

pub fn write_group_summary(path: &Path, report: &AuditReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = |err| out_err(path, err);
    let mut header = vec!["scheme".to_string(), "group".into(), "users".into(), "percent".into(), "evaluated".into()];
    for m in Metric::ALL {
        header.push(format!("{}_mean", m.name()));
        header.push(format!("{}_se", m.name()));
    }
    w.write_record(&header).map_err(e)?;
    for s in &report.schemes {
        for g in &s.groups {
            let mut rec = vec![
                s.scheme.name.clone(),
                g.label.clone(),
                g.users.to_string(),
                num(g.percent),
                g.metrics[0].n.to_string(),
            ];
            for m in &g.metrics {
                rec.push(opt_num(m.mean));
                rec.push(opt_num(m.se));
            }
            w.write_record(&rec).map_err(e)?;
        }
    }
    finish(w, path)
}

pub fn write_stats(path: &Path, report: &AuditReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = |err| out_err(path, err);
    w.write_record(["scheme", "metric", "H", "df", "p", "p_bonferroni", "n_groups"])
        .map_err(e)?;
    for t in &report.tests {
        let rec = match &t.outcome {
            TestOutcome::Tested {
                result,
                p_bonferroni,
            } => [
                t.scheme.clone(),
                t.metric.name().to_string(),
                num(result.h),
                result.df.to_string(),
                num(result.p_value),
                num(*p_bonferroni),
                result.group_sizes.len().to_string(),
            ],
            TestOutcome::NotTestable { usable_groups } => [
                t.scheme.clone(),
                t.metric.name().to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                usable_groups.to_string(),
            ],
        };
        w.write_record(&rec).map_err(e)?;
    }
    finish(w, path)
}

/// `feature,importance,rank`, most important first.
pub fn write_importance(path: &Path, model: &EbmModel) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = |err| out_err(path, err);
    w.write_record(["feature", "importance", "rank"]).map_err(e)?;
    for (rank, (f, imp)) in model.ranked_importance().into_iter().enumerate() {
        w.write_record([model.features[f].name.clone(), num(imp), (rank + 1).to_string()])
            .map_err(e)?;
    }
    finish(w, path)
}

/// `feature,bin,score`; the first data row is the intercept.
pub fn write_ebm_model(path: &Path, model: &EbmModel) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = |err| out_err(path, err);
    w.write_record(["feature", "bin", "score"]).map_err(e)?;
    w.write_record(["(intercept)", "", &num(model.intercept)])
        .map_err(e)?;
    for (spec, shape) in model.features.iter().zip(&model.shapes) {
        for (b, s) in shape.iter().enumerate() {
            w.write_record([spec.name.clone(), spec.bin_label(b), num(*s)])
                .map_err(e)?;
        }
    }
    finish(w, path)
}

/// Rows are buckets of the usage or pop-index scheme, columns the groups of
/// the demographic scheme.
pub fn write_crosstab(path: &Path, t: &CrossTab) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = |err| out_err(path, err);
    let mut header = vec![t.row_scheme.clone()];
    header.extend(t.column_labels.iter().cloned());
    w.write_record(&header).map_err(e)?;
    for (label, row) in t.row_labels.iter().zip(&t.percents) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(u32::to_string));
        w.write_record(&rec).map_err(e)?;
    }
    let mut total = vec!["users".to_string()];
    total.extend((0..t.column_labels.len()).map(|c| t.counts.iter().map(|r| r[c]).sum::<usize>().to_string()));
    w.write_record(&total).map_err(e)?;
    finish(w, path)
}

/// Header line `n_users,n_items,k,seed`, then one line per factor row:
/// `user|item,index,f_0,...,f_{k-1}`.
pub fn write_factors(path: &Path, model: &AlsModel) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| out_err(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let u = &model.user_factors;
    let i = &model.item_factors;
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "{},{},{},{}", u.rows(), i.rows(), u.k(), model.hyperparams.seed)?;
        for (side, f) in [("user", u), ("item", i)] {
            for r in 0..f.rows() {
                write!(out, "{side},{r}")?;
                for &v in f.row(r) {
                    write!(out, ",{}", num(v))?;
                }
                writeln!(out)?;
            }
        }
        out.flush()
    };
    write().map_err(|e| out_err(path, e))
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Plain-text digest of the tests and EBM rankings.
pub fn summary_text(report: &AuditReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "users: {} ({} evaluated)", report.n_users, report.n_evaluated);
    let _ = writeln!(
        s,
        "Bonferroni family: {} Kruskal-Wallis tests, one per grouping scheme per metric \
         (NDCG, MRR, RBP) with at least two usable groups; N/A groups omitted.",
        report.family_size
    );
    let _ = writeln!(s, "significance threshold (adjusted p): {}\n", report.threshold);
    let _ = writeln!(s, "{:<24} {:<6} {:>10} {:>4} {:>12} {:>12}  ", "scheme", "metric", "H", "df", "p", "p_bonf");
    for t in &report.tests {
        match &t.outcome {
            TestOutcome::Tested {
                result,
                p_bonferroni,
            } => {
                let flag = if *p_bonferroni < report.threshold { "*" } else { "" };
                let _ = writeln!(
                    s,
                    "{:<24} {:<6} {:>10.4} {:>4} {:>12.4e} {:>12.4e}  {flag}",
                    t.scheme,
                    t.metric.name(),
                    result.h,
                    result.df,
                    result.p_value,
                    p_bonferroni
                );
            }
            TestOutcome::NotTestable { usable_groups } => {
                let _ = writeln!(
                    s,
                    "{:<24} {:<6} not testable ({usable_groups} usable groups)",
                    t.scheme,
                    t.metric.name()
                );
            }
        }
    }
    for run in &report.ebm {
        let _ = writeln!(
            s,
            "\nEBM `{}` ({} users{}):",
            run.name,
            run.rows,
            if run.balanced { ", balanced" } else { "" }
        );
        for (rank, (f, imp)) in run.model.ranked_importance().into_iter().enumerate() {
            let _ = writeln!(s, "  {:>2}. {:<24} {imp:.6}", rank + 1, run.model.features[f].name);
        }
    }
    s
}

/// Writes every report table, the EBM files and the summary into `dir`.
pub fn emit_tables(staging: &Staging, report: &AuditReport) -> Result<Vec<String>> {
    let mut files = Vec::new();
    let mut emit = |name: String, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        f(&staging.path(&name)?)?;
        files.push(name);
        Ok(())
    };
    emit("group_summary.csv".into(), &|p| write_group_summary(p, report))?;
    emit("stats.csv".into(), &|p| write_stats(p, report))?;
    for run in &report.ebm {
        emit(format!("ebm/importance_{}.csv", run.name), &|p| write_importance(p, &run.model))?;
        emit(format!("ebm/model_{}.csv", run.name), &|p| write_ebm_model(p, &run.model))?;
    }
    for t in &report.crosstabs {
        emit(format!("crosstab/{}_by_{}.csv", t.row_scheme, t.column_scheme), &|p| write_crosstab(p, t))?;
    }
    emit("summary.txt".into(), &|p| write_text(p, &summary_text(report)))?;
    Ok(files)
}

pub fn manifest(
    config_toml: &str,
    dataset: serde_json::Value,
    seeds: serde_json::Value,
    folds: serde_json::Value,
    files: &[String],
) -> String {
    let value = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": sha256_hex(config_toml),
        "config": config_toml,
        "dataset": dataset,
        "seeds": seeds,
        "folds": folds,
        "files": files,
    });
    serde_json::to_string_pretty(&value).expect("json serializes") + "\n"
}
