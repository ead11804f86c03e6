use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bitkernels::{quantize_scalar, QuantKind, QuantSpec, Rounding};

use super::{BncError, Structure};

/// Flat addressing of every conditional table.
///
/// Entry `c` of the class table sits at index `c`. Feature `i` occupies a
/// block starting at `offset(i)` holding `n_classes * pcard(i)` rows of
/// `card(i)` entries, row `c * pcard + parent_value`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CptLayout {
    n_classes: usize,
    cards: Vec<usize>,
    pcards: Vec<usize>,
    parents: Vec<Option<usize>>,
    offsets: Vec<usize>,
    total: usize,
}

impl CptLayout {
    pub fn new(s: &Structure) -> Self {
        let cards = s.cardinalities().to_vec();
        let parents = s.parents().to_vec();
        let pcards: Vec<usize> = parents.iter().map(|p| p.map_or(1, |p| cards[p])).collect();
        let mut offsets = Vec::with_capacity(cards.len());
        let mut at = s.n_classes();
        for i in 0..cards.len() {
            offsets.push(at);
            at += s.n_classes() * pcards[i] * cards[i];
        }
        CptLayout {
            n_classes: s.n_classes(),
            cards,
            pcards,
            parents,
            offsets,
            total: at,
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.cards.len()
    }

    pub fn card(&self, i: usize) -> usize {
        self.cards[i]
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parents[i]
    }

    pub fn parent_card(&self, i: usize) -> usize {
        self.pcards[i]
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Distance between the entries of consecutive classes for feature `i`.
    #[inline]
    pub fn class_stride(&self, i: usize) -> usize {
        self.pcards[i] * self.cards[i]
    }

    #[inline]
    pub fn index(&self, i: usize, class: usize, parent_value: usize, value: usize) -> usize {
        self.offsets[i] + (class * self.pcards[i] + parent_value) * self.cards[i] + value
    }

    /// Index of feature `i`'s entry for class 0 under a fully observed row.
    #[inline]
    pub fn base(&self, i: usize, row: &[u8]) -> usize {
        let pa = self.parents[i].map_or(0, |p| row[p] as usize);
        self.offsets[i] + pa * self.cards[i] + row[i] as usize
    }

    /// `(start, len)` of every conditional distribution, class table first.
    pub fn rows(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(0, self.n_classes)];
        for i in 0..self.cards.len() {
            for r in 0..self.n_classes * self.pcards[i] {
                out.push((self.offsets[i] + r * self.cards[i], self.cards[i]));
            }
        }
        out
    }

    /// Row containing entry `k`.
    pub fn row_of(&self, k: usize) -> (usize, usize) {
        if k < self.n_classes {
            return (0, self.n_classes);
        }
        let i = self.offsets.partition_point(|&o| o <= k) - 1;
        let card = self.cards[i];
        let start = self.offsets[i] + (k - self.offsets[i]) / card * card;
        (start, card)
    }
}

/// How the log-probabilities are stored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Representation {
    RealDouble,
    /// Sign is implicit (always negative); each code holds the exponent field
    /// and fraction, `exponent_bits + mantissa_bits` bits.
    ReducedFloat { mantissa_bits: u32, exponent_bits: u32 },
    /// `log p = -code * scale` with `code` an unsigned `bits`-bit integer.
    FixedPoint { bits: u32, scale: f64 },
}

impl Representation {
    /// Bits stored per parameter.
    pub fn bits_per_entry(&self) -> u32 {
        match *self {
            Representation::RealDouble => 64,
            Representation::ReducedFloat {
                mantissa_bits,
                exponent_bits,
            } => mantissa_bits + exponent_bits,
            Representation::FixedPoint { bits, .. } => bits,
        }
    }
}

/// Log-probability tables for a structure.
#[derive(Clone, Debug, PartialEq)]
pub struct CptSet {
    layout: CptLayout,
    repr: Representation,
    /// Decoded log-probabilities.
    pub(crate) logs: Vec<f64>,
    /// Stored codes; empty for real-valued tables. Fixed-point codes are the
    /// nonpositive integers `-magnitude`.
    pub(crate) codes: Vec<i64>,
}

impl CptSet {
    /// Real tables from log-probabilities laid out as in `layout`.
    pub fn from_logs(layout: CptLayout, logs: Vec<f64>) -> Result<Self, BncError> {
        if logs.len() != layout.len() {
            return Err(BncError::Shape(format!("{} log entries for a {}-entry layout", logs.len(), layout.len())));
        }
        if logs.iter().any(|v| !v.is_finite() || *v > 0.0) {
            return Err(BncError::NotFinite);
        }
        Ok(CptSet {
            layout,
            repr: Representation::RealDouble,
            logs,
            codes: Vec::new(),
        })
    }

    /// Tables from stored codes, decoding them according to `repr`.
    pub fn from_codes(layout: CptLayout, repr: Representation, codes: Vec<i64>) -> Result<Self, BncError> {
        if codes.len() != layout.len() {
            return Err(BncError::Shape(format!("{} codes for a {}-entry layout", codes.len(), layout.len())));
        }
        let logs = match repr {
            Representation::RealDouble => return Err(BncError::Representation("real tables carry no codes")),
            Representation::FixedPoint { bits, scale } => {
                if !(1..=31).contains(&bits) || !(scale.is_finite() && scale > 0.0) {
                    return Err(BncError::Representation("fixed-point tables need 1..=31 bits and a positive scale"));
                }
                let max = (1i64 << bits) - 1;
                if codes.iter().any(|&c| c > 0 || -c > max) {
                    return Err(BncError::Representation("fixed-point code out of range"));
                }
                codes.iter().map(|&c| c as f64 * scale).collect()
            }
            Representation::ReducedFloat {
                mantissa_bits,
                exponent_bits,
            } => {
                let spec = float_spec(mantissa_bits, exponent_bits)?;
                let width = mantissa_bits + exponent_bits;
                if codes.iter().any(|&c| c < 0 || c >> width != 0 || c >> mantissa_bits == 0) {
                    return Err(BncError::Representation("reduced-float code out of range"));
                }
                codes.iter().map(|&c| -spec.decode(c)).collect()
            }
        };
        Ok(CptSet {
            layout,
            repr,
            logs,
            codes,
        })
    }

    pub fn layout(&self) -> &CptLayout {
        &self.layout
    }

    pub fn representation(&self) -> Representation {
        self.repr
    }

    pub fn logs(&self) -> &[f64] {
        &self.logs
    }

    pub fn codes(&self) -> &[i64] {
        &self.codes
    }

    pub fn is_integer(&self) -> bool {
        matches!(self.repr, Representation::FixedPoint { .. })
    }

    pub fn log_prob(&self, i: usize, class: usize, parent_value: usize, value: usize) -> f64 {
        self.logs[self.layout.index(i, class, parent_value, value)]
    }

    pub fn class_log_prob(&self, class: usize) -> f64 {
        self.logs[class]
    }

    /// Total storage of the parameters in bits.
    pub fn parameter_bits(&self) -> usize {
        self.layout.len() * self.repr.bits_per_entry() as usize
    }

    /// Largest `|sum_x exp(log p(x|pa)) - 1|` over all conditional rows.
    pub fn max_normalization_error(&self) -> f64 {
        self.layout
            .rows()
            .into_iter()
            .map(|(s, n)| (self.logs[s..s + n].iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn float_spec(mantissa_bits: u32, exponent_bits: u32) -> Result<QuantSpec, BncError> {
    let spec = QuantSpec::reduced_float(mantissa_bits, exponent_bits);
    spec.validate().map_err(|_| BncError::Representation("invalid reduced-float widths"))?;
    Ok(spec)
}

/// Rounds every log-probability of real tables to a reduced-precision format.
///
/// Accepts `ReducedFloat` (nearest rounding, exponent saturating; magnitudes
/// below the smallest normal become that normal so the value stays negative)
/// and `FixedPoint { bits, .. }`, whose `step` is ignored: the scale maps the
/// most negative log-probability onto the largest `bits`-bit magnitude.
pub fn quantize_cpts(cpts: &CptSet, spec: &QuantSpec) -> Result<CptSet, BncError> {
    if cpts.repr != Representation::RealDouble {
        return Err(BncError::Representation("tables are already quantized"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        QuantKind::ReducedFloat {
            mantissa_bits,
            exponent_bits,
        } => {
            let fspec = QuantSpec {
                kind: spec.kind,
                rounding: spec.rounding,
                seed: spec.seed,
            };
            fspec.validate()?;
            let min_normal = 2f64.powi(1 - (1 << (exponent_bits - 1)));
            let mut codes = Vec::with_capacity(cpts.logs.len());
            for &v in &cpts.logs {
                let mut mag = quantize_scalar(-v, &fspec, &mut rng)?;
                if mag.value == 0.0 {
                    mag = quantize_scalar(min_normal, &fspec, &mut rng)?;
                }
                codes.push(mag.code);
            }
            CptSet::from_codes(
                cpts.layout.clone(),
                Representation::ReducedFloat {
                    mantissa_bits,
                    exponent_bits,
                },
                codes,
            )
        }
        QuantKind::FixedPoint { bits, .. } => {
            if !(1..=31).contains(&bits) {
                return Err(BncError::Representation("fixed-point tables need 1..=31 bits"));
            }
            let max_code = ((1i64 << bits) - 1) as f64;
            let worst = cpts.logs.iter().fold(0.0f64, |m, v| m.max(-v));
            let scale = if worst > 0.0 { worst / max_code } else { 1.0 };
            let qspec = QuantSpec {
                kind: QuantKind::FixedPoint { bits: bits + 1, step: scale },
                rounding: spec.rounding,
                seed: spec.seed,
            };
            let mut codes = Vec::with_capacity(cpts.logs.len());
            for &v in &cpts.logs {
                let q = quantize_scalar(v, &qspec, &mut rng)?;
                codes.push(q.code.clamp(-(max_code as i64), 0));
            }
            CptSet::from_codes(cpts.layout.clone(), Representation::FixedPoint { bits, scale }, codes)
        }
        _ => Err(BncError::Representation("only reduced-float and fixed-point formats apply to log tables")),
    }
}

/// Convenience wrapper: nearest-rounded fixed-point tables.
pub fn quantize_fixed(cpts: &CptSet, bits: u32) -> Result<CptSet, BncError> {
    quantize_cpts(cpts, &QuantSpec::new(QuantKind::FixedPoint { bits, step: 1.0 }, Rounding::Nearest))
}

/// Convenience wrapper: nearest-rounded reduced-float tables.
pub fn quantize_float(cpts: &CptSet, mantissa_bits: u32, exponent_bits: u32) -> Result<CptSet, BncError> {
    quantize_cpts(cpts, &QuantSpec::reduced_float(mantissa_bits, exponent_bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnc::learn_structure_nb;

    fn toy() -> CptSet {
        let s = Structure::new(2, vec![2, 3], vec![None, Some(0)]).unwrap();
        let layout = CptLayout::new(&s);
        let mut logs = vec![0.0; layout.len()];
        for (start, n) in layout.rows() {
            let raw: Vec<f64> = (0..n).map(|k| 1.0 + ((start + k) % 5) as f64).collect();
            let z: f64 = raw.iter().sum();
            for k in 0..n {
                logs[start + k] = (raw[k] / z).ln();
            }
        }
        CptSet::from_logs(layout, logs).unwrap()
    }

    #[test]
    fn layout_indexing_is_a_bijection() {
        let s = Structure::new(3, vec![2, 3, 4], vec![None, Some(0), Some(1)]).unwrap();
        let l = CptLayout::new(&s);
        assert_eq!(l.len(), 3 + 3 * 2 + 3 * 2 * 3 + 3 * 3 * 4);
        let mut seen = vec![false; l.len()];
        for c in 0..3 {
            seen[c] = true;
        }
        for i in 0..3 {
            for c in 0..3 {
                for pa in 0..l.parent_card(i) {
                    for x in 0..l.card(i) {
                        let k = l.index(i, c, pa, x);
                        assert!(!seen[k]);
                        seen[k] = true;
                        let (start, n) = l.row_of(k);
                        assert_eq!(start, l.index(i, c, pa, 0));
                        assert_eq!(n, l.card(i));
                    }
                }
            }
        }
        assert!(seen.iter().all(|&b| b));
        let row = [1u8, 2, 3];
        assert_eq!(l.base(2, &row) + 2 * l.class_stride(2), l.index(2, 2, 2, 3));
    }

    #[test]
    fn fixed_point_rounding_bound() {
        let s = learn_structure_nb(2, &[2]).unwrap();
        let half = 0.5f64.ln();
        let logs = vec![half, half, -0.75, (1.0 - (-0.75f64).exp()).ln(), half, half];
        let cpts = CptSet::from_logs(CptLayout::new(&s), logs.clone()).unwrap();
        let q = quantize_fixed(&cpts, 6).unwrap();
        let Representation::FixedPoint { bits, scale } = q.representation() else {
            panic!()
        };
        assert_eq!(bits, 6);
        let worst = logs.iter().fold(0.0f64, |m, v| m.max(-v));
        assert!((scale - worst / 63.0).abs() < 1e-15);
        assert!((q.logs()[2] + 0.75).abs() <= scale / 2.0 + 1e-15);
        for (a, b) in q.logs().iter().zip(&logs) {
            assert!((a - b).abs() <= scale / 2.0 + 1e-15);
        }
        assert!(q.codes().iter().any(|&c| c == -63));
    }

    #[test]
    fn quantized_codes_decode_to_nonpositive() {
        let cpts = toy();
        for (m, e) in [(1, 2), (2, 3), (4, 5), (8, 8)] {
            let q = quantize_float(&cpts, m, e).unwrap();
            assert!(q.logs().iter().all(|v| v.is_finite() && *v < 0.0));
            let back = CptSet::from_codes(cpts.layout().clone(), q.representation(), q.codes().to_vec()).unwrap();
            assert_eq!(back, q);
        }
        for b in [1, 3, 8, 16] {
            let q = quantize_fixed(&cpts, b).unwrap();
            assert!(q.logs().iter().all(|v| v.is_finite() && *v <= 0.0));
        }
    }

    #[test]
    fn high_precision_float_is_lossless() {
        let cpts = toy();
        let q = quantize_float(&cpts, 52, 11).unwrap();
        assert_eq!(q.logs(), cpts.logs());
    }

    #[test]
    fn underflow_clamps_to_smallest_normal() {
        let s = learn_structure_nb(2, &[1]).unwrap();
        let cpts = CptSet::from_logs(CptLayout::new(&s), vec![(0.5f64).ln(), (0.5f64).ln(), 0.0, 0.0]).unwrap();
        let q = quantize_float(&cpts, 3, 3).unwrap();
        assert_eq!(q.logs()[2], -0.125);
    }

    #[test]
    fn rejects_binary_kinds() {
        let spec = QuantSpec::nearest(QuantKind::TernarySymmetric);
        assert!(quantize_cpts(&toy(), &spec).is_err());
    }

    #[test]
    fn real_tables_are_normalized() {
        assert!(toy().max_normalization_error() < 1e-12);
    }
}
