//! Packed sign algebra, fixed-point GEMM and scalar quantizers.
//!
//! Everything here is a pure function of its inputs. Stochastic rounding
//! draws from a generator owned by the caller.

mod bitmatrix;
mod fixed;
mod gemm;
mod packing;
mod quant;

use thiserror::Error;

pub use bitmatrix::{pack_signs, BitMatrix};
pub use fixed::{fixed_gemm, signed_width, FixedTensor};
pub use packing::{pack_bits, unpack_bits};
pub use gemm::{binary_dot, binary_gemm, float_gemm_naive, ternary_gemm, IntMatrix, TernaryMatrix};
pub use quant::{
    quantize_binary_scaled, quantize_scalar, quantize_ternary, Granularity, QuantKind, QuantSpec, Quantized,
    Rounding, ScaledBinary, Ternary, TERNARY_THRESHOLD_FACTOR,
};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("empty input")]
    Empty,
    #[error("expected {expected} elements, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("packed rows of {left} and {right} words for a {words}-word length")]
    LengthMismatch { left: usize, right: usize, words: usize },
    #[error("inner dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("padding bits set in packed row")]
    Padding,
    #[error("value {value} does not fit in {bits} bits")]
    OutOfRange { value: i64, bits: u32 },
    #[error("accumulator would need {needed} bits")]
    AccumulatorWidth { needed: u32 },
    #[error("invalid quantization spec: {0}")]
    InvalidSpec(&'static str),
    #[error("degenerate ternary quantization: no weight exceeds the threshold")]
    DegenerateTernary,
    #[error("non-finite input")]
    NotFinite,
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("corrupt container: {0}")]
    Corrupt(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
