use std::io::{self, Read, Write};

use super::KernelError;

const MAGIC: &[u8; 4] = b"QBM1";

/// Row-major matrix of ±1 signs packed 64 per `u64` word.
///
/// Bit `b` of word `w` in row `r` holds the sign of element `(r, 64 * w + b)`:
/// a set bit is `+1`, a clear bit is `-1`. Bits past `cols` in the last word
/// of each row are always zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    data: Vec<u64>,
}

#[inline]
pub(crate) fn words_for(cols: usize) -> usize {
    cols.div_ceil(64)
}

#[inline]
fn tail_mask(cols: usize) -> u64 {
    match cols % 64 {
        0 => !0,
        r => (1u64 << r) - 1,
    }
}

/// Packs a real vector into a single sign row. `sign(0)` is `+1`.
pub fn pack_signs(v: &[f64]) -> Result<BitMatrix, KernelError> {
    if v.is_empty() {
        return Err(KernelError::Empty);
    }
    Ok(BitMatrix::from_fn(1, v.len(), |_, c| v[c] >= 0.0))
}

impl BitMatrix {
    /// All-`-1` matrix (every bit clear).
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words_per_row = words_for(cols);
        BitMatrix {
            rows,
            cols,
            words_per_row,
            data: vec![0; rows * words_per_row],
        }
    }

    /// Builds a matrix from a predicate returning `true` for `+1`.
    pub fn from_fn(rows: usize, cols: usize, mut positive: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = BitMatrix::zeros(rows, cols);
        for r in 0..rows {
            let row = &mut m.data[r * m.words_per_row..(r + 1) * m.words_per_row];
            for c in 0..cols {
                if positive(r, c) {
                    row[c / 64] |= 1 << (c % 64);
                }
            }
        }
        m
    }

    /// Packs a row-major real matrix by sign (`x >= 0` is `+1`).
    pub fn from_signs(rows: usize, cols: usize, values: &[f64]) -> Result<Self, KernelError> {
        if values.len() != rows * cols {
            return Err(KernelError::Shape {
                expected: rows * cols,
                found: values.len(),
            });
        }
        Ok(BitMatrix::from_fn(rows, cols, |r, c| values[r * cols + c] >= 0.0))
    }

    /// Wraps raw words. Fails if the length is wrong or a padding bit is set.
    pub fn from_words(rows: usize, cols: usize, data: Vec<u64>) -> Result<Self, KernelError> {
        let words_per_row = words_for(cols);
        if data.len() != rows * words_per_row {
            return Err(KernelError::Shape {
                expected: rows * words_per_row,
                found: data.len(),
            });
        }
        let m = BitMatrix {
            rows,
            cols,
            words_per_row,
            data,
        };
        if !m.padding_is_zero() {
            return Err(KernelError::Padding);
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn words(&self) -> &[u64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[u64] {
        &self.data[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    /// Sign of element `(r, c)` as `+1` or `-1`.
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> i8 {
        let w = self.data[r * self.words_per_row + c / 64];
        if (w >> (c % 64)) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    pub fn set(&mut self, r: usize, c: usize, positive: bool) {
        let w = &mut self.data[r * self.words_per_row + c / 64];
        if positive {
            *w |= 1 << (c % 64);
        } else {
            *w &= !(1 << (c % 64));
        }
    }

    /// Flips every sign in row `r`, keeping the padding clear.
    pub fn negate_row(&mut self, r: usize) {
        let mask = tail_mask(self.cols);
        let wpr = self.words_per_row;
        let row = &mut self.data[r * wpr..(r + 1) * wpr];
        for w in row.iter_mut() {
            *w = !*w;
        }
        if let Some(last) = row.last_mut() {
            *last &= mask;
        }
    }

    /// Row-major `±1` values.
    pub fn unpack(&self) -> Vec<i8> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(self.get(r, c));
            }
        }
        out
    }

    pub fn padding_is_zero(&self) -> bool {
        if self.words_per_row == 0 {
            return true;
        }
        let mask = tail_mask(self.cols);
        (0..self.rows).all(|r| self.row(r)[self.words_per_row - 1] & !mask == 0)
    }

    /// Bytes taken by the packed words.
    pub fn payload_bytes(&self) -> usize {
        self.data.len() * 8
    }

    /// Writes the `QBM1` container: magic, `rows` and `cols` as little-endian
    /// `u64`, then every word little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        for word in &self.data {
            w.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(20 + self.payload_bytes());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, KernelError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(KernelError::BadMagic(magic));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let rows = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let cols = u64::from_le_bytes(b8) as usize;
        let n = rows
            .checked_mul(words_for(cols))
            .ok_or(KernelError::Corrupt("matrix dimensions overflow"))?;
        let mut data = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            data.push(u64::from_le_bytes(b8));
        }
        BitMatrix::from_words(rows, cols, data)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, KernelError> {
        let mut cursor = bytes;
        let m = BitMatrix::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(KernelError::Corrupt("trailing bytes after matrix payload"));
        }
        Ok(m)
    }
}
