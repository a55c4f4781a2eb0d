//! Core algorithms for auditing how recommender utility varies across user
//! groups.
//!
//! Everything in this crate is pure computation over in-memory data and only
//! needs `alloc`: the sparse interaction model, the implicit-feedback ALS
//! recommender, cross-validation folds and ranking metrics, the pop-index
//! popularity statistic, user grouping schemes, Kruskal-Wallis testing and an
//! additive boosting explainer. File formats, configuration and the command
//! line live in the `recaudit` crate.
//!
//! Enable the `parallel` feature to run per-row ALS solves, per-user
//! evaluation and EBM bags on the rayon thread pool. Results are bit-identical
//! with and without it.
#![no_std]

extern crate alloc;

pub mod als;
pub mod ebm;
pub mod evaluation;
pub mod grouping;
pub mod model;
pub mod popindex;
pub mod rng;
pub mod stats;

pub use als::{AlsHyperparams, AlsModel};
pub use ebm::{EbmConfig, EbmModel, FeatureSpec, FeatureValue};
pub use evaluation::{FoldPlan, FoldScheme, Metric, MetricFrame, MetricRow, Persistence};
pub use grouping::{Attribute, GroupAssignment, GroupingScheme, SchemeKind};
pub use model::{
    Dataset, DatasetStats, GdpTable, Gender, IdMap, InteractionMatrix, Provenance, RawDataset,
    UserAttributes,
};
pub use stats::KwResult;
