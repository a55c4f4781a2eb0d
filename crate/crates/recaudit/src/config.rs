//! TOML audit configuration. Every key has a default, so an empty file runs
//! the standard protocol on the built-in synthetic dataset.

use std::path::{Path, PathBuf};

use recaudit_core::evaluation::EvalConfig;
use recaudit_core::{
    AlsHyperparams, Attribute, EbmConfig, FoldScheme, GroupingScheme, Persistence, Provenance,
    SchemeKind,
};
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::synthetic::SyntheticConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub dataset: DatasetConfig,
    pub synthetic: SyntheticConfig,
    pub als: AlsConfig,
    pub folds: FoldConfig,
    pub evaluation: EvaluationConfig,
    pub stats: StatsConfig,
    pub ebm: EbmSection,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub grouping: Vec<SchemeConfig>,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Lfm360k,
    Ml1m,
    #[default]
    Synthetic,
}

impl DatasetKind {
    pub fn provenance(self) -> Provenance {
        match self {
            DatasetKind::Lfm360k => Provenance::Lfm360k,
            DatasetKind::Ml1m => Provenance::Ml1m,
            DatasetKind::Synthetic => Provenance::Synthetic,
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s.parse::<Provenance>()? {
            Provenance::Lfm360k => DatasetKind::Lfm360k,
            Provenance::Ml1m => DatasetKind::Ml1m,
            Provenance::Synthetic => DatasetKind::Synthetic,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// LFM360K play counts or ML1M `ratings.dat`.
    pub interactions: Option<PathBuf>,
    /// LFM360K profiles or ML1M `users.dat`.
    pub users: Option<PathBuf>,
    /// Optional `country,gdp_per_capita` table.
    pub gdp: Option<PathBuf>,
    /// Keep a seeded random subset of this many users after the cold-start
    /// filter.
    pub max_users: Option<usize>,
    pub sample_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlsConfig {
    pub factors: usize,
    pub regularization: f64,
    pub iterations: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        let hp = AlsHyperparams::default();
        Self {
            factors: hp.factors,
            regularization: hp.regularization,
            iterations: hp.iterations,
            alpha: hp.alpha,
            seed: hp.seed,
        }
    }
}

impl AlsConfig {
    pub fn hyperparams(&self) -> AlsHyperparams {
        AlsHyperparams {
            factors: self.factors,
            regularization: self.regularization,
            iterations: self.iterations,
            alpha: self.alpha,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldSchemeKind {
    Sample,
    Partition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldConfig {
    pub k: usize,
    /// Defaults to `sample` for LFM360K and `partition` otherwise.
    pub scheme: Option<FoldSchemeKind>,
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for FoldConfig {
    fn default() -> Self {
        Self {
            k: 5,
            scheme: None,
            sample_size: 5000,
            seed: 42,
        }
    }
}

impl FoldConfig {
    pub fn scheme_for(&self, kind: DatasetKind) -> FoldScheme {
        let kind = self.scheme.unwrap_or(match kind {
            DatasetKind::Lfm360k => FoldSchemeKind::Sample,
            DatasetKind::Ml1m | DatasetKind::Synthetic => FoldSchemeKind::Partition,
        });
        match kind {
            FoldSchemeKind::Sample => FoldScheme::Sample {
                sample_size: self.sample_size,
            },
            FoldSchemeKind::Partition => FoldScheme::Partition,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub holdout_fraction: f64,
    pub depth: usize,
    pub persistence: f64,
    pub filter_train: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            holdout_fraction: 0.2,
            depth: e.depth,
            persistence: e.persistence.get(),
            filter_train: e.filter_train,
        }
    }
}

impl EvaluationConfig {
    pub fn eval_config(&self) -> Result<EvalConfig> {
        Ok(EvalConfig {
            depth: self.depth,
            filter_train: self.filter_train,
            persistence: Persistence::new(self.persistence).map_err(AuditError::config)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    /// Adjusted p-values below this are flagged significant.
    pub threshold: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self { threshold: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EbmSection {
    pub learning_rate: f64,
    pub max_rounds: usize,
    pub bags: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub max_bins: usize,
    pub seed: u64,
    /// Fit each feature group on a sample with equally many users per group.
    pub balanced: bool,
}

impl Default for EbmSection {
    fn default() -> Self {
        let c = EbmConfig::default();
        Self {
            learning_rate: c.learning_rate,
            max_rounds: c.max_rounds,
            bags: c.bags,
            patience: c.patience,
            validation_fraction: c.validation_fraction,
            max_bins: c.max_bins,
            seed: c.seed,
            balanced: true,
        }
    }
}

impl EbmSection {
    pub fn ebm_config(&self) -> EbmConfig {
        EbmConfig {
            learning_rate: self.learning_rate,
            max_rounds: self.max_rounds,
            bags: self.bags,
            patience: self.patience,
            validation_fraction: self.validation_fraction,
            max_bins: self.max_bins,
            seed: self.seed,
        }
    }
}

/// One `[[grouping]]` table. `kind` selects which of the optional keys are
/// read.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub name: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<i64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub order: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lower_bounds: Vec<i64>,
    #[serde(default)]
    pub ordinal_labels: bool,
}

impl SchemeConfig {
    pub fn to_scheme(&self) -> Result<GroupingScheme> {
        let err = |msg: &str| AuditError::config(format!("grouping `{}`: {msg}", self.name));
        let attribute = || -> Result<Attribute> {
            self.attribute
                .as_deref()
                .ok_or_else(|| err("missing `attribute`"))?
                .parse()
                .map_err(|e: String| err(&e))
        };
        let bins = || self.bins.ok_or_else(|| err("missing `bins`"));
        let kind = match self.kind.as_str() {
            "categorical" => SchemeKind::Categorical {
                attribute: attribute()?,
                order: self.order.clone(),
            },
            "equal_range" => SchemeKind::EqualRange {
                attribute: attribute()?,
                width: self.width.ok_or_else(|| err("missing `width`"))?,
                anchor: self.anchor,
            },
            "equal_count" => SchemeKind::EqualCount {
                attribute: attribute()?,
                bins: bins()?,
                ordinal_labels: self.ordinal_labels,
            },
            "brackets" => SchemeKind::Brackets {
                attribute: attribute()?,
                lower_bounds: self.lower_bounds.clone(),
            },
            "capped" => SchemeKind::Capped {
                attribute: attribute()?,
                cap: self.cap.ok_or_else(|| err("missing `cap`"))?,
            },
            "prevalence" => SchemeKind::Prevalence { bins: bins()? },
            "gdp" => SchemeKind::ExternalOrder { bins: bins()? },
            "last_digit" => SchemeKind::Control,
            other => return Err(err(&format!("unknown kind `{other}`"))),
        };
        let scheme = GroupingScheme::new(self.name.clone(), kind);
        scheme.validate().map_err(AuditError::config)?;
        Ok(scheme)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("audit-out"),
        }
    }
}

impl AuditConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(AuditError::config)
    }

    /// Reads `path`; relative data paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AuditError::config(format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let d = &mut self.dataset;
        for p in [&mut d.interactions, &mut d.users, &mut d.gdp].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if self.output.dir.is_relative() {
            self.output.dir = base.join(&self.output.dir);
        }
    }

    /// Sets every pipeline seed (folds, ALS, EBM, sampling). The synthetic
    /// data seed is left alone so the same data is re-audited.
    pub fn override_seed(&mut self, seed: u64) {
        self.folds.seed = seed;
        self.als.seed = seed;
        self.ebm.seed = seed;
        self.dataset.sample_seed = seed;
    }

    /// Canonical TOML of the effective configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn schemes(&self, has_gdp: bool) -> Result<Vec<GroupingScheme>> {
        if self.grouping.is_empty() {
            return Ok(recaudit_core::grouping::default_schemes(
                self.dataset.kind.provenance(),
                has_gdp,
            ));
        }
        let schemes: Vec<GroupingScheme> = self
            .grouping
            .iter()
            .map(SchemeConfig::to_scheme)
            .collect::<Result<_>>()?;
        let mut names: Vec<&str> = schemes.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(AuditError::config(format!("duplicate grouping name `{}`", w[0])));
        }
        Ok(schemes)
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        self.als.hyperparams().validate().map_err(AuditError::config)?;
        self.evaluation.eval_config()?;
        let h = self.evaluation.holdout_fraction;
        if !(h > 0.0 && h < 1.0) {
            return Err(AuditError::config(format!("holdout_fraction {h} is outside (0, 1)")));
        }
        if self.evaluation.depth == 0 {
            return Err(AuditError::config("evaluation depth must be positive"));
        }
        if self.folds.k == 0 {
            return Err(AuditError::config("fold count must be positive"));
        }
        let t = self.stats.threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(AuditError::config(format!("stats threshold {t} is outside (0, 1)")));
        }
        if self.ebm.bags == 0 || self.ebm.max_rounds == 0 || self.ebm.max_bins < 2 {
            return Err(AuditError::config("ebm bags, max_rounds and max_bins must be positive"));
        }
        self.synthetic.validate()?;
        if self.dataset.kind != DatasetKind::Synthetic {
            for (key, path) in [
                ("interactions", &self.dataset.interactions),
                ("users", &self.dataset.users),
            ] {
                if path.is_none() {
                    return Err(AuditError::config(format!(
                        "dataset.{key} is required for {:?} data",
                        self.dataset.kind
                    )));
                }
            }
        }
        self.schemes(self.dataset.gdp.is_some()).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_has_protocol_defaults() {
        let c = AuditConfig::parse("").unwrap();
        assert_eq!(c.als.hyperparams(), AlsHyperparams::default());
        assert_eq!(c.als.factors, 50);
        assert_eq!(c.evaluation.depth, 1000);
        assert_eq!(c.evaluation.holdout_fraction, 0.2);
        assert_eq!(c.folds.k, 5);
        assert_eq!(c.stats.threshold, 0.01);
        assert_eq!(c.ebm.bags, 8);
        assert_eq!(c.folds.scheme_for(DatasetKind::Lfm360k), FoldScheme::Sample { sample_size: 5000 });
        assert_eq!(c.folds.scheme_for(DatasetKind::Ml1m), FoldScheme::Partition);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(AuditConfig::parse("[als]\nfactor = 3\n").is_err());
        assert!(AuditConfig::parse("[nope]\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let text = r#"
[dataset]
kind = "ml1m"
interactions = "ratings.dat"
users = "users.dat"

[als]
factors = 8
iterations = 3

[[grouping]]
name = "age"
kind = "equal_count"
attribute = "age"
bins = 4

[[grouping]]
name = "control"
kind = "last_digit"
"#;
        let c = AuditConfig::parse(text).unwrap();
        assert_eq!(c.dataset.kind, DatasetKind::Ml1m);
        assert_eq!(c.als.factors, 8);
        assert_eq!(c.als.regularization, 0.01);
        let again = AuditConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        let schemes = c.schemes(false).unwrap();
        assert_eq!(schemes.len(), 2);
        assert_eq!(schemes[1].kind, SchemeKind::Control);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let bad = [
            "[als]\nfactors = 0\n",
            "[evaluation]\npersistence = 1.5\n",
            "[evaluation]\nholdout_fraction = 0\n",
            "[dataset]\nkind = \"lfm360k\"\n",
            "[[grouping]]\nname = \"x\"\nkind = \"equal_count\"\nattribute = \"age\"\nbins = 1\n",
            "[[grouping]]\nname = \"x\"\nkind = \"wavelet\"\n",
        ];
        for text in bad {
            let err = AuditConfig::parse(text).and_then(|c| c.validate()).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn seed_override_touches_pipeline_seeds_only() {
        let mut c = AuditConfig::default();
        let data_seed = c.synthetic.seed;
        c.override_seed(99);
        assert_eq!((c.als.seed, c.folds.seed, c.ebm.seed), (99, 99, 99));
        assert_eq!(c.synthetic.seed, data_seed);
    }
}
