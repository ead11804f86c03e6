//! XOR/popcount sign products and the float reference they replace.

use super::bitmatrix::BitMatrix;
use super::KernelError;

/// Dense row-major integer matrix produced by the integer kernels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i64>,
}

impl IntMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        IntMatrix {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> i64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[i64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[inline(always)]
fn mismatches(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// `Σ a_i b_i` over two packed ±1 rows of logical length `n`.
///
/// Computed as `n - 2 * popcount(a ^ b)`. With zero padding the XOR never
/// counts padding bits, which an XNOR formulation would.
pub fn binary_dot(a: &[u64], b: &[u64], n: usize) -> Result<i64, KernelError> {
    let words = n.div_ceil(64);
    if a.len() != words || b.len() != words {
        return Err(KernelError::LengthMismatch {
            left: a.len(),
            right: b.len(),
            words,
        });
    }
    Ok(n as i64 - 2 * mismatches(a, b) as i64)
}

/// `out[i][j] = binary_dot(A[i], B[j])`; `b` holds the right operand transposed.
pub fn binary_gemm(a: &BitMatrix, b: &BitMatrix) -> Result<IntMatrix, KernelError> {
    if a.cols() != b.cols() {
        return Err(KernelError::DimensionMismatch {
            left: a.cols(),
            right: b.cols(),
        });
    }
    let mut out = IntMatrix::zeros(a.rows(), b.rows());
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("popcnt") {
            // SAFETY: the popcnt feature was detected at runtime.
            unsafe { gemm_popcnt(a, b, &mut out) };
            return Ok(out);
        }
    }
    gemm_body(a, b, &mut out);
    Ok(out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn gemm_popcnt(a: &BitMatrix, b: &BitMatrix, out: &mut IntMatrix) {
    gemm_body(a, b, out)
}

#[inline(always)]
fn gemm_body(a: &BitMatrix, b: &BitMatrix, out: &mut IntMatrix) {
    let n = a.cols() as i64;
    let k = b.rows();
    for i in 0..a.rows() {
        let ar = a.row(i);
        let orow = &mut out.data[i * k..(i + 1) * k];
        let mut j = 0;
        // four right-hand rows per pass so each left word is loaded once
        while j + 4 <= k {
            let (b0, b1, b2, b3) = (b.row(j), b.row(j + 1), b.row(j + 2), b.row(j + 3));
            let (mut c0, mut c1, mut c2, mut c3) = (0u32, 0u32, 0u32, 0u32);
            for (w, &x) in ar.iter().enumerate() {
                c0 += (x ^ b0[w]).count_ones();
                c1 += (x ^ b1[w]).count_ones();
                c2 += (x ^ b2[w]).count_ones();
                c3 += (x ^ b3[w]).count_ones();
            }
            orow[j] = n - 2 * c0 as i64;
            orow[j + 1] = n - 2 * c1 as i64;
            orow[j + 2] = n - 2 * c2 as i64;
            orow[j + 3] = n - 2 * c3 as i64;
            j += 4;
        }
        for (jj, o) in orow.iter_mut().enumerate().skip(j) {
            *o = n - 2 * mismatches(ar, b.row(jj)) as i64;
        }
    }
}

/// Sign matrix with a zero mask: entries in `{-1, 0, +1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TernaryMatrix {
    pub signs: BitMatrix,
    pub nonzero: BitMatrix,
}

impl TernaryMatrix {
    pub fn from_values(rows: usize, cols: usize, values: &[i8]) -> Result<Self, KernelError> {
        if values.len() != rows * cols {
            return Err(KernelError::Shape {
                expected: rows * cols,
                found: values.len(),
            });
        }
        Ok(TernaryMatrix {
            signs: BitMatrix::from_fn(rows, cols, |r, c| values[r * cols + c] >= 0),
            nonzero: BitMatrix::from_fn(rows, cols, |r, c| values[r * cols + c] != 0),
        })
    }

    pub fn rows(&self) -> usize {
        self.signs.rows()
    }

    pub fn cols(&self) -> usize {
        self.signs.cols()
    }

    pub fn get(&self, r: usize, c: usize) -> i8 {
        if self.nonzero.get(r, c) > 0 {
            self.signs.get(r, c)
        } else {
            0
        }
    }
}

/// `out[i][j] = Σ_c T[j][c] * x[i][c]` for ternary weights and ±1 inputs.
pub fn ternary_gemm(x: &BitMatrix, t: &TernaryMatrix) -> Result<IntMatrix, KernelError> {
    if x.cols() != t.cols() {
        return Err(KernelError::DimensionMismatch {
            left: x.cols(),
            right: t.cols(),
        });
    }
    let k = t.rows();
    let mut out = IntMatrix::zeros(x.rows(), k);
    for i in 0..x.rows() {
        let xr = x.row(i);
        for j in 0..k {
            let (s, m) = (t.signs.row(j), t.nonzero.row(j));
            let (mut nnz, mut mis) = (0i64, 0i64);
            for w in 0..xr.len() {
                nnz += m[w].count_ones() as i64;
                mis += ((xr[w] ^ s[w]) & m[w]).count_ones() as i64;
            }
            out.data[i * k + j] = nnz - 2 * mis;
        }
    }
    Ok(out)
}

/// Plain triple-loop `f32` GEMM with the right operand stored transposed
/// (`b_t` is `k × n`). This is the float baseline the packed kernel is timed
/// against.
pub fn float_gemm_naive(a: &[f32], b_t: &[f32], m: usize, n: usize, k: usize) -> Vec<f32> {
    assert_eq!(a.len(), m * n);
    assert_eq!(b_t.len(), k * n);
    let mut out = vec![0f32; m * k];
    for i in 0..m {
        let ar = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let br = &b_t[j * n..(j + 1) * n];
            let mut acc = 0f32;
            for p in 0..n {
                acc += ar[p] * br[p];
            }
            out[i * k + j] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_dot(a: &[i8], b: &[i8]) -> i64 {
        a.iter().zip(b).map(|(&x, &y)| x as i64 * y as i64).sum()
    }

    fn random_signs(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> BitMatrix {
        BitMatrix::from_fn(rows, cols, |_, _| rng.gen())
    }

    #[test]
    fn identical_rows_give_n() {
        let a = BitMatrix::from_fn(1, 64, |_, c| c % 3 == 0);
        assert_eq!(binary_dot(a.row(0), a.row(0), 64).unwrap(), 64);
    }

    #[test]
    fn antipodal_rows_give_minus_n() {
        let a = BitMatrix::from_fn(1, 64, |_, c| c % 5 == 0);
        let mut b = a.clone();
        b.negate_row(0);
        assert_eq!(binary_dot(a.row(0), b.row(0), 64).unwrap(), -64);
    }

    #[test]
    fn exhaustive_n8_matches_brute_force() {
        for x in 0u32..256 {
            for y in 0u32..256 {
                let a = BitMatrix::from_fn(1, 8, |_, c| (x >> c) & 1 == 1);
                let b = BitMatrix::from_fn(1, 8, |_, c| (y >> c) & 1 == 1);
                let got = binary_dot(a.row(0), b.row(0), 8).unwrap();
                assert_eq!(got, brute_dot(&a.unpack(), &b.unpack()));
            }
        }
    }

    #[test]
    fn length_mismatch_is_error() {
        assert!(binary_dot(&[0, 0], &[0], 65).is_err());
        assert!(binary_dot(&[0], &[0], 65).is_err());
    }

    #[test]
    fn gemm_of_all_positive_rows() {
        let a = BitMatrix::from_fn(2, 64, |_, _| true);
        let out = binary_gemm(&a, &a).unwrap();
        assert_eq!(out.data, vec![64; 4]);
    }

    #[test]
    fn gemm_matches_naive_oracle_256() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_signs(&mut rng, 256, 256);
        let b = random_signs(&mut rng, 256, 256);
        let out = binary_gemm(&a, &b).unwrap();
        let (ua, ub) = (a.unpack(), b.unpack());
        for i in 0..256 {
            for j in 0..256 {
                let expected = brute_dot(&ua[i * 256..(i + 1) * 256], &ub[j * 256..(j + 1) * 256]);
                assert_eq!(out.get(i, j), expected);
            }
        }
    }

    #[test]
    fn gemm_odd_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_signs(&mut rng, 7, 131);
        let b = random_signs(&mut rng, 9, 131);
        let out = binary_gemm(&a, &b).unwrap();
        let (ua, ub) = (a.unpack(), b.unpack());
        for i in 0..7 {
            for j in 0..9 {
                assert_eq!(out.get(i, j), brute_dot(&ua[i * 131..(i + 1) * 131], &ub[j * 131..(j + 1) * 131]));
            }
        }
        assert!(binary_gemm(&a, &random_signs(&mut rng, 2, 130)).is_err());
    }

    #[test]
    fn ternary_gemm_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, n, k) = (5, 77, 6);
        let x = random_signs(&mut rng, m, n);
        let tv: Vec<i8> = (0..k * n).map(|_| rng.gen_range(-1..=1)).collect();
        let t = TernaryMatrix::from_values(k, n, &tv).unwrap();
        let out = ternary_gemm(&x, &t).unwrap();
        let ux = x.unpack();
        for i in 0..m {
            for j in 0..k {
                assert_eq!(out.get(i, j), brute_dot(&ux[i * n..(i + 1) * n], &tv[j * n..(j + 1) * n]));
            }
        }
    }

    #[test]
    fn float_gemm_small() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b_t = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(float_gemm_naive(&a, &b_t, 2, 2, 2), vec![1.0, 2.0, 3.0, 4.0]);
    }
}
