//! Scalar and matrix quantizers.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bitmatrix::BitMatrix;
use super::KernelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rounding {
    /// Nearest grid point, ties away from zero.
    Nearest,
    /// Lower neighbour `l` with probability `(u - x) / (u - l)`, else `u`.
    Stochastic,
}

/// A numeric format.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QuantKind {
    /// `{-1, +1}`; a positive scale is applied outside the code.
    BinaryScaled,
    /// `{-1, 0, +1}`.
    TernarySymmetric,
    /// Signed `bits`-bit integers times `step`. One bit means `{-1, +1}`.
    FixedPoint { bits: u32, step: f64 },
    /// Sign, `exponent_bits` exponent and `mantissa_bits` fraction with an
    /// implicit leading one. Zero is representable; there are no subnormals
    /// or infinities.
    ReducedFloat { mantissa_bits: u32, exponent_bits: u32 },
    /// `±2^k` for `min_exp <= k <= max_exp`, plus zero.
    Pow2 { min_exp: i32, max_exp: i32 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantSpec {
    pub kind: QuantKind,
    pub rounding: Rounding,
    /// Only consulted by [`QuantSpec::rng`] for stochastic rounding.
    pub seed: u64,
}

/// Result of quantizing one value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quantized {
    pub code: i64,
    pub value: f64,
    pub saturated: bool,
}

impl QuantSpec {
    pub fn new(kind: QuantKind, rounding: Rounding) -> Self {
        QuantSpec {
            kind,
            rounding,
            seed: 0,
        }
    }

    pub fn nearest(kind: QuantKind) -> Self {
        QuantSpec::new(kind, Rounding::Nearest)
    }

    pub fn stochastic(kind: QuantKind, seed: u64) -> Self {
        QuantSpec {
            kind,
            rounding: Rounding::Stochastic,
            seed,
        }
    }

    pub fn fixed_point(bits: u32, step: f64) -> Self {
        QuantSpec::nearest(QuantKind::FixedPoint { bits, step })
    }

    pub fn reduced_float(mantissa_bits: u32, exponent_bits: u32) -> Self {
        QuantSpec::nearest(QuantKind::ReducedFloat {
            mantissa_bits,
            exponent_bits,
        })
    }

    /// Caller-owned generator for stochastic rounding, seeded from `seed`.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let bad = |why: &'static str| Err(KernelError::InvalidSpec(why));
        match self.kind {
            QuantKind::FixedPoint { bits, step } => {
                if !(1..=32).contains(&bits) {
                    return bad("fixed-point bits must be in 1..=32");
                }
                if !(step > 0.0 && step.is_finite()) {
                    return bad("fixed-point step must be positive and finite");
                }
            }
            QuantKind::ReducedFloat {
                mantissa_bits,
                exponent_bits,
            } => {
                if !(1..=52).contains(&mantissa_bits) {
                    return bad("mantissa bits must be in 1..=52");
                }
                if !(1..=11).contains(&exponent_bits) {
                    return bad("exponent bits must be in 1..=11");
                }
            }
            QuantKind::Pow2 { min_exp, max_exp } => {
                if min_exp > max_exp || min_exp < -1000 || max_exp > 1000 {
                    return bad("pow2 exponent range is empty or out of bounds");
                }
            }
            QuantKind::BinaryScaled | QuantKind::TernarySymmetric => {}
        }
        Ok(())
    }

    /// Largest representable magnitude.
    pub fn max_value(&self) -> f64 {
        match self.kind {
            QuantKind::BinaryScaled | QuantKind::TernarySymmetric => 1.0,
            QuantKind::FixedPoint { bits: 1, step } => step,
            QuantKind::FixedPoint { bits, step } => ((1i64 << (bits - 1)) - 1) as f64 * step,
            QuantKind::ReducedFloat {
                mantissa_bits,
                exponent_bits,
            } => {
                let (_, emax) = float_exponent_range(exponent_bits);
                (2.0 - 2f64.powi(-(mantissa_bits as i32))) * 2f64.powi(emax)
            }
            QuantKind::Pow2 { max_exp, .. } => 2f64.powi(max_exp),
        }
    }

    /// Maps a code back to its real value.
    pub fn decode(&self, code: i64) -> f64 {
        match self.kind {
            QuantKind::BinaryScaled | QuantKind::TernarySymmetric => code as f64,
            QuantKind::FixedPoint { step, .. } => code as f64 * step,
            QuantKind::ReducedFloat {
                mantissa_bits,
                exponent_bits,
            } => {
                let m = mantissa_bits;
                let e_field = (code >> m) & ((1 << exponent_bits) - 1);
                if e_field == 0 {
                    return 0.0;
                }
                let sign = if (code >> (m + exponent_bits)) & 1 == 1 { -1.0 } else { 1.0 };
                let frac = (code & ((1 << m) - 1)) as f64;
                let exp = e_field as i32 - (1 << (exponent_bits - 1));
                sign * (1.0 + frac / 2f64.powi(m as i32)) * 2f64.powi(exp)
            }
            QuantKind::Pow2 { min_exp, .. } => {
                if code == 0 {
                    0.0
                } else {
                    code.signum() as f64 * 2f64.powi(min_exp + code.unsigned_abs() as i32 - 1)
                }
            }
        }
    }

    fn encode(&self, value: f64) -> i64 {
        match self.kind {
            QuantKind::BinaryScaled | QuantKind::TernarySymmetric => value as i64,
            QuantKind::FixedPoint { step, .. } => (value / step).round() as i64,
            QuantKind::ReducedFloat {
                mantissa_bits,
                exponent_bits,
            } => {
                if value == 0.0 {
                    return 0;
                }
                let m = mantissa_bits;
                let mag = value.abs();
                let exp = floor_log2(mag);
                let frac = ((mag / 2f64.powi(exp) - 1.0) * 2f64.powi(m as i32)).round() as i64;
                let e_field = (exp + (1 << (exponent_bits - 1))) as i64;
                let sign = i64::from(value < 0.0);
                (sign << (m + exponent_bits)) | (e_field << m) | frac
            }
            QuantKind::Pow2 { min_exp, .. } => {
                if value == 0.0 {
                    0
                } else {
                    let k = floor_log2(value.abs());
                    value.signum() as i64 * (k - min_exp + 1) as i64
                }
            }
        }
    }

    /// Representable neighbours `lo <= x <= hi` for an in-range `x`.
    fn neighbours(&self, x: f64) -> (f64, f64) {
        match self.kind {
            QuantKind::BinaryScaled => sign_neighbours(x, 1.0),
            QuantKind::FixedPoint { bits: 1, step } => sign_neighbours(x, step),
            QuantKind::TernarySymmetric => grid_neighbours(x, 1.0),
            QuantKind::FixedPoint { step, .. } => grid_neighbours(x, step),
            QuantKind::ReducedFloat {
                mantissa_bits,
                exponent_bits,
            } => {
                let (lo, hi) = float_neighbours(x.abs(), mantissa_bits, exponent_bits);
                if x < 0.0 {
                    (-hi, -lo)
                } else {
                    (lo, hi)
                }
            }
            QuantKind::Pow2 { min_exp, .. } => {
                let mag = x.abs();
                let smallest = 2f64.powi(min_exp);
                let (lo, hi) = if mag == 0.0 {
                    (0.0, 0.0)
                } else if mag < smallest {
                    (0.0, smallest)
                } else {
                    let l = 2f64.powi(floor_log2(mag));
                    if l == mag {
                        (l, l)
                    } else {
                        (l, 2.0 * l)
                    }
                };
                if x < 0.0 {
                    (-hi, -lo)
                } else {
                    (lo, hi)
                }
            }
        }
    }

    fn min_value(&self) -> f64 {
        match self.kind {
            QuantKind::FixedPoint { bits, step } if bits > 1 => -((1i64 << (bits - 1)) as f64) * step,
            _ => -self.max_value(),
        }
    }
}

fn float_exponent_range(exponent_bits: u32) -> (i32, i32) {
    let bias = 1i32 << (exponent_bits - 1);
    (1 - bias, (1 << exponent_bits) - 1 - bias)
}

fn floor_log2(x: f64) -> i32 {
    let mut k = x.log2().floor() as i32;
    // log2 can be off by one near powers of two
    if 2f64.powi(k) > x {
        k -= 1;
    } else if 2f64.powi(k + 1) <= x {
        k += 1;
    }
    k
}

fn sign_neighbours(x: f64, s: f64) -> (f64, f64) {
    if x <= -s {
        (-s, -s)
    } else if x >= s {
        (s, s)
    } else {
        (-s, s)
    }
}

fn grid_neighbours(x: f64, step: f64) -> (f64, f64) {
    let q = x / step;
    let lo = q.floor();
    if lo == q {
        (x, x)
    } else {
        (lo * step, (lo + 1.0) * step)
    }
}

fn float_neighbours(mag: f64, m: u32, e: u32) -> (f64, f64) {
    let (emin, _) = float_exponent_range(e);
    let min_normal = 2f64.powi(emin);
    if mag == 0.0 {
        return (0.0, 0.0);
    }
    if mag < min_normal {
        return (0.0, min_normal);
    }
    let k = floor_log2(mag);
    let ulp = 2f64.powi(k - m as i32);
    let q = mag / ulp;
    let lo = q.floor();
    if lo == q {
        (mag, mag)
    } else {
        (lo * ulp, (lo + 1.0) * ulp)
    }
}

/// Quantizes one value according to `spec`.
///
/// Out-of-range inputs saturate to the nearest representable extreme and set
/// `saturated`. The generator is only drawn from in stochastic mode.
pub fn quantize_scalar<R: Rng + ?Sized>(x: f64, spec: &QuantSpec, rng: &mut R) -> Result<Quantized, KernelError> {
    spec.validate()?;
    if x.is_nan() {
        return Err(KernelError::NotFinite);
    }
    let (min, max) = (spec.min_value(), spec.max_value());
    if x > max || x < min {
        let value = if x > max { max } else { min };
        return Ok(Quantized {
            code: spec.encode(value),
            value,
            saturated: true,
        });
    }
    let (lo, hi) = spec.neighbours(x);
    let value = if lo == hi {
        lo
    } else {
        match spec.rounding {
            Rounding::Nearest => {
                let (dl, du) = (x - lo, hi - x);
                if dl < du {
                    lo
                } else if du < dl {
                    hi
                } else if hi.abs() >= lo.abs() {
                    hi
                } else {
                    lo
                }
            }
            Rounding::Stochastic => {
                let p_hi = (x - lo) / (hi - lo);
                if rng.gen::<f64>() < p_hi {
                    hi
                } else {
                    lo
                }
            }
        }
    };
    Ok(Quantized {
        code: spec.encode(value),
        value,
        saturated: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Granularity {
    PerMatrix,
    PerRow,
}

/// `W ≈ α ⊙ B` with `B = sign(W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledBinary {
    /// One entry for [`Granularity::PerMatrix`], one per row otherwise.
    pub alphas: Vec<f64>,
    pub signs: BitMatrix,
}

impl ScaledBinary {
    pub fn alpha_for_row(&self, r: usize) -> f64 {
        if self.alphas.len() == 1 {
            self.alphas[0]
        } else {
            self.alphas[r]
        }
    }

    pub fn decode(&self) -> Array2<f64> {
        let (rows, cols) = (self.signs.rows(), self.signs.cols());
        Array2::from_shape_fn((rows, cols), |(r, c)| self.alpha_for_row(r) * self.signs.get(r, c) as f64)
    }
}

/// Sign pattern plus the mean absolute value per unit, which is the
/// least-squares scale for that pattern.
pub fn quantize_binary_scaled(w: ArrayView2<f64>, granularity: Granularity) -> Result<ScaledBinary, KernelError> {
    if w.is_empty() {
        return Err(KernelError::Empty);
    }
    let (rows, cols) = w.dim();
    let signs = BitMatrix::from_fn(rows, cols, |r, c| w[[r, c]] >= 0.0);
    let alphas = match granularity {
        Granularity::PerMatrix => vec![w.iter().map(|v| v.abs()).sum::<f64>() / w.len() as f64],
        Granularity::PerRow => w
            .axis_iter(Axis(0))
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>() / cols as f64)
            .collect(),
    };
    Ok(ScaledBinary { alphas, signs })
}

/// Default threshold factor: `Δ = 0.7 · mean|W|`.
pub const TERNARY_THRESHOLD_FACTOR: f64 = 0.7;

#[derive(Clone, Debug, PartialEq)]
pub struct Ternary {
    pub scale: f64,
    pub threshold: f64,
    pub values: Array2<i8>,
}

impl Ternary {
    pub fn decode(&self) -> Array2<f64> {
        self.values.mapv(|t| t as f64 * self.scale)
    }
}

/// Symmetric ternary projection `W ≈ a · T`, `T ∈ {-1, 0, +1}`.
///
/// Entries with `|w| > Δ` keep their sign, the rest become zero; `a` is the
/// mean magnitude of the surviving entries.
pub fn quantize_ternary(w: ArrayView2<f64>, threshold_factor: f64) -> Result<Ternary, KernelError> {
    if w.is_empty() {
        return Err(KernelError::Empty);
    }
    let mean_abs = w.iter().map(|v| v.abs()).sum::<f64>() / w.len() as f64;
    let threshold = threshold_factor * mean_abs;
    let mut kept = 0usize;
    let mut kept_sum = 0.0;
    let values = w.mapv(|v| {
        if v.abs() > threshold {
            kept += 1;
            kept_sum += v.abs();
            if v > 0.0 {
                1
            } else {
                -1
            }
        } else {
            0
        }
    });
    if kept == 0 {
        return Err(KernelError::DegenerateTernary);
    }
    Ok(Ternary {
        scale: kept_sum / kept as f64,
        threshold,
        values,
    })
}
