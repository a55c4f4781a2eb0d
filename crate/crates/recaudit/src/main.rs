use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use recaudit::config::DatasetKind;
use recaudit::{output, AuditConfig, AuditError, Result};

/// Audit a collaborative-filtering recommender for utility differences
/// between user groups.
#[derive(Parser)]
#[command(name = "recaudit", version)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every pipeline seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset kind: lfm360k, ml1m or synthetic.
    #[arg(long, global = true)]
    dataset: Option<DatasetKind>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and clean the dataset, then print its statistics as JSON.
    IngestStats,
    /// Fit one model on all interactions and write its factors.
    Train,
    /// Cross-validated evaluation: per-user metrics only.
    Evaluate,
    /// Full audit: evaluation, group tests, EBM, tables and charts.
    Audit,
    /// Rebuild tables and charts in --out from its metrics.csv and users.csv.
    Report,
}

fn config(cli: &Cli) -> Result<AuditConfig> {
    let mut config = match &cli.config {
        Some(path) => AuditConfig::load(path)?,
        None => AuditConfig::default(),
    };
    if let Some(kind) = cli.dataset {
        config.dataset.kind = kind;
    }
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<()> {
    let config = config(cli)?;
    match cli.command {
        Command::IngestStats => {
            let summary = recaudit::ingest_stats(&config)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
        Command::Train => {
            let dir = recaudit::run_train(&config)?;
            println!("factors written to {}", dir.display());
        }
        Command::Evaluate => {
            let dir = recaudit::run_evaluate(&config)?;
            println!("metrics written to {}", dir.display());
        }
        Command::Audit => {
            let outcome = recaudit::run_audit(&config)?;
            print!("{}", output::summary_text(&outcome.report));
            println!("results written to {}", outcome.dir.display());
        }
        Command::Report => {
            let report = recaudit::run_report(&config, &config.output.dir)?;
            print!("{}", output::summary_text(&report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => Err(AuditError::config(format!("thread pool: {e}"))),
        },
        None => run(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
