//! Interpretable approximations of additive tree models.
//!
//! A trained tree ensemble splits the input space into thousands of cells.
//! This crate re-expresses every input as a binary vector of split-rule
//! indicators, fits a `K`-component mixture of experts over those bits and
//! the ensemble's output with EM, and reads each component back as a
//! conjunction of feature intervals paired with a predicted value.
//!
//! Pipeline:
//!
//! 1. [`trainer::fit_gbt`] or [`trainer::parse_ensemble_json`] produces a
//!    [`TreeEnsemble`].
//! 2. [`SplitSchema::from_ensemble`] collects the split rules and
//!    [`BinaryDataset::build`] encodes inputs together with the ensemble
//!    prediction.
//! 3. [`em::fit`] fits a [`MixtureModel`].
//! 4. [`MixtureModel::extract_rules`] yields a [`RuleSet`].

pub mod baseline;
pub mod binarizer;
pub mod data;
pub mod em;
pub mod ensemble;
mod error;
pub mod math;
pub mod mixture;
pub mod pipeline;
pub mod rules;
pub mod trainer;

pub use binarizer::{BinaryDataset, SplitRule, SplitSchema};
pub use data::LabeledDataset;
pub use em::{EmConfig, FitReport, Responsibilities};
pub use ensemble::{Node, Tree, TreeEnsemble};
pub use error::{Error, Result};
pub use mixture::{GateWeights, MixtureModel};
pub use rules::{Interval, Rule, RuleSet};
pub use trainer::GbtConfig;
