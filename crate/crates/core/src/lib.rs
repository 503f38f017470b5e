//! Tractable probabilistic models as feature extractors.
//!
//! This crate bundles two tractable density estimators over binary data —
//! Sum-Product Networks learned with LearnSPN-b and EM-fitted mixtures of
//! Chow-Liu trees — together with two embedding generators that turn any
//! such model into a per-sample feature vector: random rectangular
//! marginal queries, and random-patch models evaluated through a sliding
//! window. A one-vs-rest L2 logistic regression harness scores the
//! resulting representations against a raw-input baseline, producing
//! accuracy-vs-feature-count curves.

pub mod cltree;
pub mod config;
pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod learnspn;
pub mod logspace;
pub mod pipeline;
pub mod spn;
#[doc(hidden)]
pub mod testkit;

pub use config::ExperimentConfig;
pub use data::{BinaryDataset, PartialEvidence};
pub use error::{Error, Result};
