//! Reproduction harness: configuration, CSV reports, timing and the
//! experiments behind each command-line subcommand.

mod config;
mod experiments;
mod logistic;
mod report;

use thiserror::Error;

use crate::bitkernels::KernelError;
use crate::bnc::BncError;
use crate::data::DataError;
use crate::quantdnn::DnnError;

pub use config::{Config, DATA_ENV};
pub use experiments::{
    bench_gemm, eval, missing_curve, mnist_bnc, mnist_dense, mnist_table, quantize, sweep_bits, train_bnc, train_dnn,
    DnnOutcome, MnistBnc, MnistDense, MNIST_LEVELS, MNIST_TRAIN, UCI_DATASETS,
};
pub use logistic::LogisticRegression;
pub use report::{median_ms, Table};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("correctness gate failed: {0}")]
    Gate(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Bnc(#[from] BncError),
    #[error(transparent)]
    Dnn(#[from] DnnError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit status: 2 for configuration errors, 3 for failed
    /// correctness gates, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Gate(_) => 3,
            _ => 1,
        }
    }
}
