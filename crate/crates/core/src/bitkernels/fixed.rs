//! Variable-width fixed-point tensors and their exact integer GEMM.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::bitmatrix::BitMatrix;
use super::packing::{pack_bits, unpack_bits};
use super::quant::{quantize_scalar, QuantKind, QuantSpec, Rounding};
use super::KernelError;

/// Row-major integer matrix with a shared real scale:
/// `real = value * scale`.
///
/// For `bits >= 2` every value lies in the signed range
/// `[-2^(bits-1), 2^(bits-1) - 1]`. A 1-bit tensor holds signs: `{-1, +1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedTensor {
    rows: usize,
    cols: usize,
    values: Vec<i64>,
    bits: u32,
    scale: f64,
}

/// Smallest signed width (at least 2 bits) holding every value.
pub fn signed_width(values: &[i64]) -> u32 {
    let mut bits = 2;
    for &v in values {
        let need = if v >= 0 {
            65 - v.leading_zeros()
        } else {
            65 - (!v).leading_zeros()
        };
        bits = bits.max(need);
    }
    bits
}

fn fits(v: i64, bits: u32) -> bool {
    if bits == 1 {
        return v == 1 || v == -1;
    }
    if bits >= 64 {
        return true;
    }
    let half = 1i64 << (bits - 1);
    (-half..half).contains(&v)
}

impl FixedTensor {
    pub fn new(rows: usize, cols: usize, values: Vec<i64>, bits: u32, scale: f64) -> Result<Self, KernelError> {
        if values.len() != rows * cols {
            return Err(KernelError::Shape {
                expected: rows * cols,
                found: values.len(),
            });
        }
        if !(1..=64).contains(&bits) {
            return Err(KernelError::InvalidSpec("fixed tensor bits must be in 1..=64"));
        }
        if let Some(&v) = values.iter().find(|&&v| !fits(v, bits)) {
            return Err(KernelError::OutOfRange { value: v, bits });
        }
        Ok(FixedTensor {
            rows,
            cols,
            values,
            bits,
            scale,
        })
    }

    /// Quantizes a real matrix onto the grid `k * step` with `bits`-bit codes.
    pub fn quantize<R: Rng + ?Sized>(
        w: ArrayView2<f64>,
        bits: u32,
        step: f64,
        rounding: Rounding,
        rng: &mut R,
    ) -> Result<Self, KernelError> {
        let spec = QuantSpec::new(QuantKind::FixedPoint { bits, step }, rounding);
        let (rows, cols) = w.dim();
        let mut values = Vec::with_capacity(rows * cols);
        for &x in w.iter() {
            values.push(quantize_scalar(x, &spec, rng)?.code);
        }
        FixedTensor::new(rows, cols, values, bits, step)
    }

    /// 1-bit tensor from packed signs.
    pub fn from_bits(m: &BitMatrix) -> Self {
        FixedTensor {
            rows: m.rows(),
            cols: m.cols(),
            values: m.unpack().into_iter().map(i64::from).collect(),
            bits: 1,
            scale: 1.0,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn values(&self) -> &[i64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> i64 {
        self.values[r * self.cols + c]
    }

    pub fn decode(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows, self.cols), |(r, c)| self.get(r, c) as f64 * self.scale)
    }

    pub fn transpose(&self) -> FixedTensor {
        let mut values = Vec::with_capacity(self.values.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                values.push(self.get(r, c));
            }
        }
        FixedTensor {
            rows: self.cols,
            cols: self.rows,
            values,
            bits: self.bits,
            scale: self.scale,
        }
    }

    /// Bytes needed to store the codes densely at `bits` bits each.
    pub fn packed_bytes(&self) -> usize {
        (self.values.len() * self.bits as usize).div_ceil(8)
    }

    /// `QFT1`, rows and cols (u64 LE), bits (u32 LE), scale (f64 LE), then the
    /// codes densely packed as `bits`-bit two's complement. A 1-bit code
    /// stores `+1` as 1 and `-1` as 0.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FIXED_HEADER + self.packed_bytes());
        out.extend_from_slice(FIXED_MAGIC);
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        out.extend_from_slice(&self.bits.to_le_bytes());
        out.extend_from_slice(&self.scale.to_le_bytes());
        let codes = self.values.iter().map(|&v| if self.bits == 1 { u64::from(v > 0) } else { v as u64 });
        out.extend(pack_bits(codes, self.bits));
        out
    }

    /// Reads one tensor from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub fn read_prefix(bytes: &[u8]) -> Result<(Self, usize), KernelError> {
        if bytes.len() < FIXED_HEADER {
            return Err(KernelError::Corrupt("truncated fixed tensor header"));
        }
        let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        let bits = u32::from_le_bytes(bytes[20..24].try_into().expect("4 bytes"));
        let count = (u64_at(4) as usize)
            .checked_mul(u64_at(12) as usize)
            .and_then(|c| c.checked_mul(bits as usize))
            .ok_or(KernelError::Corrupt("fixed tensor shape"))?;
        let len = FIXED_HEADER + count.div_ceil(8);
        if bytes.len() < len {
            return Err(KernelError::Corrupt("truncated fixed tensor payload"));
        }
        Ok((FixedTensor::from_bytes(&bytes[..len])?, len))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, KernelError> {
        if bytes.len() < FIXED_HEADER {
            return Err(KernelError::Corrupt("truncated fixed tensor header"));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if &magic != FIXED_MAGIC {
            return Err(KernelError::BadMagic(magic));
        }
        let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        let (rows, cols) = (u64_at(4) as usize, u64_at(12) as usize);
        let bits = u32::from_le_bytes(bytes[20..24].try_into().expect("4 bytes"));
        let scale = f64::from_bits(u64_at(24));
        if !(1..=64).contains(&bits) {
            return Err(KernelError::Corrupt("fixed tensor width"));
        }
        let count = rows.checked_mul(cols).ok_or(KernelError::Corrupt("fixed tensor shape"))?;
        let raw = unpack_bits(&bytes[FIXED_HEADER..], bits, count)?;
        let values = raw
            .into_iter()
            .map(|u| match bits {
                1 => if u == 1 { 1 } else { -1 },
                64 => u as i64,
                _ => ((u << (64 - bits)) as i64) >> (64 - bits),
            })
            .collect();
        FixedTensor::new(rows, cols, values, bits, scale)
    }
}

const FIXED_MAGIC: &[u8; 4] = b"QFT1";
const FIXED_HEADER: usize = 32;

/// Exact `A (m×n) · B (n×k)` with 64-bit accumulation.
///
/// Requires `A.bits + B.bits + ceil(log2 n) <= 64` so that no partial sum can
/// overflow. The result carries `A.scale * B.scale` and the smallest width
/// that holds its largest magnitude.
pub fn fixed_gemm(a: &FixedTensor, b: &FixedTensor) -> Result<FixedTensor, KernelError> {
    if a.cols != b.rows {
        return Err(KernelError::DimensionMismatch {
            left: a.cols,
            right: b.rows,
        });
    }
    let n = a.cols;
    let log_n = usize::BITS - n.saturating_sub(1).leading_zeros();
    let needed = a.bits + b.bits + log_n;
    if needed > 64 {
        return Err(KernelError::AccumulatorWidth { needed });
    }
    let (m, k) = (a.rows, b.cols);
    let mut out = vec![0i64; m * k];
    for i in 0..m {
        let orow = &mut out[i * k..(i + 1) * k];
        for p in 0..n {
            let av = a.values[i * n + p];
            if av == 0 {
                continue;
            }
            let brow = &b.values[p * k..(p + 1) * k];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    let bits = signed_width(&out);
    Ok(FixedTensor {
        rows: m,
        cols: k,
        values: out,
        bits,
        scale: a.scale * b.scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitkernels::binary_gemm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn range_invariant_enforced() {
        assert!(FixedTensor::new(1, 2, vec![7, -8], 4, 1.0).is_ok());
        assert!(FixedTensor::new(1, 1, vec![8], 4, 1.0).is_err());
        assert!(FixedTensor::new(1, 1, vec![0], 1, 1.0).is_err());
        assert!(FixedTensor::new(1, 2, vec![1, -1], 1, 1.0).is_ok());
    }

    #[test]
    fn signed_width_examples() {
        assert_eq!(signed_width(&[0]), 2);
        assert_eq!(signed_width(&[1, -2]), 2);
        assert_eq!(signed_width(&[2]), 3);
        assert_eq!(signed_width(&[-129]), 9);
        assert_eq!(signed_width(&[127, -128]), 8);
    }

    #[test]
    fn one_bit_gemm_matches_binary_gemm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = BitMatrix::from_fn(6, 90, |_, _| rng.gen());
        let b = BitMatrix::from_fn(5, 90, |_, _| rng.gen());
        let packed = binary_gemm(&a, &b).unwrap();
        let fixed = fixed_gemm(&FixedTensor::from_bits(&a), &FixedTensor::from_bits(&b).transpose()).unwrap();
        assert_eq!(fixed.values(), packed.data.as_slice());
    }

    #[test]
    fn identity_returns_other_operand() {
        let n = 5;
        let eye: Vec<i64> = (0..n * n).map(|i| i64::from(i % (n + 1) == 0)).collect();
        let a = FixedTensor::new(n, n, eye, 2, 1.0).unwrap();
        let b = FixedTensor::new(n, 3, (0..15).map(|v| v - 7).collect(), 4, 0.25).unwrap();
        let c = fixed_gemm(&a, &b).unwrap();
        assert_eq!(c.values(), b.values());
        assert_eq!(c.scale(), 0.25);
    }

    #[test]
    fn four_bit_gemm_matches_real_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let wa = Array2::from_shape_fn((32, 32), |_| rng.gen_range(-1.0..1.0));
        let wb = Array2::from_shape_fn((32, 32), |_| rng.gen_range(-1.0..1.0));
        let a = FixedTensor::quantize(wa.view(), 4, 1.0 / 7.0, Rounding::Nearest, &mut rng).unwrap();
        let b = FixedTensor::quantize(wb.view(), 4, 1.0 / 8.0, Rounding::Nearest, &mut rng).unwrap();
        let c = fixed_gemm(&a, &b).unwrap();
        let (ra, rb) = (a.decode(), b.decode());
        let ulp = a.scale() * b.scale();
        for i in 0..32 {
            for j in 0..32 {
                let mut acc = 0.0;
                for p in 0..32 {
                    acc += ra[[i, p]] * rb[[p, j]];
                }
                assert!((c.get(i, j) as f64 * c.scale() - acc).abs() <= ulp);
            }
        }
    }

    #[test]
    fn accumulator_precondition() {
        let a = FixedTensor::new(1, 4, vec![0; 4], 32, 1.0).unwrap();
        let b = FixedTensor::new(4, 1, vec![0; 4], 32, 1.0).unwrap();
        assert!(matches!(fixed_gemm(&a, &b), Err(KernelError::AccumulatorWidth { needed: 66 })));
        let b = FixedTensor::new(3, 1, vec![0; 3], 2, 1.0).unwrap();
        assert!(fixed_gemm(&a, &b).is_err());
    }

    #[test]
    fn serialization_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for bits in [1u32, 2, 3, 9, 17, 64] {
            let values: Vec<i64> = (0..35)
                .map(|_| match bits {
                    1 => if rng.gen() { 1 } else { -1 },
                    64 => rng.gen(),
                    _ => rng.gen_range(-(1i64 << (bits - 1))..(1i64 << (bits - 1))),
                })
                .collect();
            let t = FixedTensor::new(5, 7, values, bits, 0.125).unwrap();
            let bytes = t.to_bytes();
            assert_eq!(bytes.len(), 32 + t.packed_bytes());
            assert_eq!(FixedTensor::from_bytes(&bytes).unwrap(), t);
            assert!(FixedTensor::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        }
        assert!(matches!(FixedTensor::from_bytes(&[0u8; 32]), Err(KernelError::BadMagic(_))));
    }

    #[test]
    fn packed_size() {
        let t = FixedTensor::new(3, 5, vec![0; 15], 3, 1.0).unwrap();
        assert_eq!(t.packed_bytes(), 6);
    }
}
