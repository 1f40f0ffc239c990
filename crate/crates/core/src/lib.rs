//! Layer selection for user-level regression over pooled transformer
//! embeddings.
//!
//! The pipeline reads per-user, per-layer token sums ([`corpus`]), averages
//! them into user vectors and concatenates layers ([`aggregate`]), scores
//! each candidate representation by k-fold cross-validated ridge regression
//! ([`ridge`], [`cv`]) and grows the best layer combination greedily
//! ([`select`]). [`synth`] generates corpora with planted layer signals so
//! every stage can be checked against a known answer.

pub mod aggregate;
pub mod cli;
pub mod corpus;
pub mod cv;
mod error;
pub mod metrics;
pub mod report;
pub mod ridge;
pub mod select;
pub mod synth;

pub use aggregate::{build_design, pool_user, DesignMatrix, LayerSet};
pub use corpus::{load_corpus, validate_corpus, Corpus, Manifest, OutcomeTable, UserEmbeddings};
pub use cv::{cross_validate, make_folds, CvReport, FoldAssignment};
pub use error::{Error, Result};
pub use metrics::{EvalResult, TTestResult};
pub use ridge::{AlphaGrid, RidgeModel};
pub use select::{evaluate_final, greedy_select, sweep_layers, SelectionConfig, SelectionTrace};
pub use synth::{SynthSpec, SynthTruth};
