use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[synthetic]
users = 150
items = 80
min_items = 10
max_items = 30

[als]
factors = 8
iterations = 5

[evaluation]
depth = 50

[ebm]
max_rounds = 100
bags = 2
"#;

fn recaudit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recaudit"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn audit_writes_the_full_layout_and_report_rerenders_it() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("audit.toml"), SMALL).unwrap();
    let out = recaudit(tmp.path(), &["audit", "--config", "audit.toml", "--out", "res"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Bonferroni family"), "{stdout}");

    let res = tmp.path().join("res");
    for f in [
        "metrics.csv",
        "users.csv",
        "group_summary.csv",
        "stats.csv",
        "summary.txt",
        "manifest.json",
        "charts/planted_group.svg",
        "ebm/importance_all.csv",
        "crosstab/usage_by_gender.csv",
    ] {
        assert!(res.join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(res.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"]["folds"], 42);
    let listed: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(listed.contains(&"stats.csv"));
    assert!(!tmp.path().read_dir().unwrap().any(|e| {
        e.unwrap().file_name().to_string_lossy().contains(".partial")
    }));

    let stats = fs::read_to_string(res.join("stats.csv")).unwrap();
    let metrics = fs::read(res.join("metrics.csv")).unwrap();
    let again = recaudit(tmp.path(), &["report", "--config", "audit.toml", "--out", "res"]);
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    assert_eq!(fs::read_to_string(res.join("stats.csv")).unwrap(), stats);
    assert_eq!(fs::read(res.join("metrics.csv")).unwrap(), metrics);
}

#[test]
fn seed_flag_reaches_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("audit.toml"), SMALL).unwrap();
    let out = recaudit(
        tmp.path(),
        &["evaluate", "--config", "audit.toml", "--out", "ev", "--seed", "9"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("ev/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"]["folds"], 9);
    assert_eq!(manifest["seeds"]["als"], 9);
}

#[test]
fn ingest_stats_prints_json() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("audit.toml"), SMALL).unwrap();
    let out = recaudit(tmp.path(), &["ingest-stats", "--config", "audit.toml"]);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["n_users"], 150);
    assert_eq!(summary["provenance"], "synthetic");
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.toml"), "[als]\nfactors = 0\n").unwrap();
    let out = recaudit(tmp.path(), &["audit", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(tmp.path().join("typo.toml"), "[als]\nfactor = 4\n").unwrap();
    let out = recaudit(tmp.path(), &["ingest-stats", "--config", "typo.toml"]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(
        tmp.path().join("missing.toml"),
        "[dataset]\nkind = \"ml1m\"\ninteractions = \"nope/ratings.dat\"\nusers = \"nope/users.dat\"\n",
    )
    .unwrap();
    let out = recaudit(tmp.path(), &["ingest-stats", "--config", "missing.toml"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ingest"));
}
