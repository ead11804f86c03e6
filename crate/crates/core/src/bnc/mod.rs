//! Bayesian-network classifiers over discrete features.
//!
//! Naive Bayes and tree-augmented structures, generative and discriminative
//! parameter learning, reduced-precision log tables, integer-only scoring and
//! exact marginalization of missing features.

mod classify;
mod cpt;
pub mod io;
mod learn;
mod online;
mod structure;

use thiserror::Error;

pub use classify::{BayesNetClassifier, Prediction, Scores};
pub use cpt::{quantize_cpts, quantize_fixed, quantize_float, CptLayout, CptSet, Representation};
pub use learn::{
    conditional_log_likelihood, learn_dfe, learn_hybrid, learn_mcl, learn_ml, learn_mm, margin_objective, mcl_gradient, mm_gradient, tune_mm,
    Fit, OptimConfig, DEFAULT_SMOOTHING, GAMMA_GRID,
};
pub use online::{LogTable, OnlineState, LOG_FRAC_BITS, LOG_TABLE_SIZE};
pub use structure::{conditional_mutual_information, learn_structure_nb, learn_structure_tan, Structure, CMI_SMOOTHING};

#[derive(Debug, Error)]
pub enum BncError {
    #[error("invalid structure: {0}")]
    Structure(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dataset has missing values")]
    MissingValues,
    #[error("non-finite objective or parameter")]
    NotFinite,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("representation: {0}")]
    Representation(&'static str),
    #[error("feature {feature} has out-of-range value {value}")]
    ValueOutOfRange { feature: usize, value: u8 },
    #[error("malformed classifier file: {0}")]
    Format(String),
    #[error(transparent)]
    Kernel(#[from] crate::bitkernels::KernelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
