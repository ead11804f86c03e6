//! Feed-forward networks with quantized weights and sign activations.
//!
//! Training keeps real shadow weights and quantizes them on every forward
//! pass; gradients pass through the quantizers by a straight-through
//! surrogate. A trained network folds its batch normalization into integer
//! thresholds and exports to packed kernels.

mod bundle;
mod net;
mod train;

use thiserror::Error;

use crate::bitkernels::{KernelError, QuantKind, QuantSpec};

pub use bundle::{PackedLayer, PackedMLP, PackedWeights};
pub use net::{BatchNorm, Folded, Forward, Gradients, QuantMLP, QuantWeights, BN_EPS};
pub use train::{train_ste, write_log, EpochLog, Optimizer, TrainConfig, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// `+1` when the response is at least zero, else `-1`.
    Sign,
    /// Raw weighted count; only valid for the last layer.
    LinearCount,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Sign => "sign",
            Activation::LinearCount => "linear_count",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight_spec: QuantSpec,
    pub activation: Activation,
    pub use_batchnorm: bool,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, weight_spec: QuantSpec, activation: Activation, use_batchnorm: bool) -> Self {
        LayerSpec {
            in_dim,
            out_dim,
            weight_spec,
            activation,
            use_batchnorm,
        }
    }

    /// Sign layer with `bits`-bit weights on the grid `k / (2^(bits-1) - 1)`
    /// (pure signs for one bit).
    pub fn sign(in_dim: usize, out_dim: usize, bits: u32, use_batchnorm: bool) -> Self {
        LayerSpec::new(in_dim, out_dim, weight_grid(bits), Activation::Sign, use_batchnorm)
    }

    /// Output layer producing weighted counts.
    pub fn count(in_dim: usize, out_dim: usize, bits: u32) -> Self {
        LayerSpec::new(in_dim, out_dim, weight_grid(bits), Activation::LinearCount, false)
    }

    /// Bits stored per weight.
    pub fn weight_bits(&self) -> u32 {
        match self.weight_spec.kind {
            QuantKind::BinaryScaled => 1,
            QuantKind::TernarySymmetric => 2,
            QuantKind::FixedPoint { bits, .. } => bits,
            QuantKind::ReducedFloat {
                mantissa_bits,
                exponent_bits,
            } => 1 + mantissa_bits + exponent_bits,
            QuantKind::Pow2 { min_exp, max_exp } => 2 + (max_exp - min_exp + 1).max(1).ilog2(),
        }
    }
}

/// Fixed-point weight grid covering `[-1, 1]` with `bits` bits.
pub fn weight_grid(bits: u32) -> QuantSpec {
    let step = if bits <= 1 { 1.0 } else { 1.0 / ((1u64 << (bits - 1)) - 1) as f64 };
    QuantSpec::fixed_point(bits, step)
}

/// Inputs on `[0, 1]` as `bits`-bit codes `round((2^bits - 1) x)`, held
/// in one extra sign bit.
pub fn unit_interval_inputs(bits: u32) -> QuantSpec {
    QuantSpec::fixed_point(bits + 1, 1.0 / ((1u64 << bits) - 1) as f64)
}

/// Inputs already in `{-1, +1}` (or small integers).
pub fn sign_inputs() -> QuantSpec {
    QuantSpec::fixed_point(2, 1.0)
}

#[derive(Debug, Error)]
pub enum DnnError {
    #[error("network has no layers")]
    Empty,
    #[error("invalid layer configuration: {0}")]
    Spec(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-invertible batchnorm at layer {layer}, unit {unit}")]
    NonInvertibleBatchnorm { layer: usize, unit: usize },
    #[error("network is not folded")]
    NotFolded,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("malformed bundle: {0}")]
    Format(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
