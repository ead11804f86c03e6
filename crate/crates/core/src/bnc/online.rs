use super::classify::BayesNetClassifier;
use super::cpt::{CptLayout, CptSet, Representation};
use super::{BncError, Structure};

/// Fractional bits of the looked-up log values.
pub const LOG_FRAC_BITS: u32 = 18;
/// Entries in the logarithm table.
pub const LOG_TABLE_SIZE: usize = 1024;

const EXACT: u64 = 256;
const MANTISSA_BITS: u32 = 5;

/// Integer table of `round(ln(v) * 2^LOG_FRAC_BITS)` for bucketed `v`.
///
/// Values below 256 have their own entry. Larger values share a bucket with
/// everything having the same leading bit and the same next five bits; the
/// entry holds the log of the bucket midpoint. Every `u32` maps to an entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogTable {
    entries: Vec<i32>,
}

impl Default for LogTable {
    fn default() -> Self {
        Self::new()
    }
}

impl LogTable {
    pub fn new() -> Self {
        let unit = f64::from(1u32 << LOG_FRAC_BITS);
        let mut entries = vec![0i32; LOG_TABLE_SIZE];
        for (idx, e) in entries.iter_mut().enumerate().skip(1) {
            let center = if (idx as u64) < EXACT {
                idx as f64
            } else {
                let j = idx as u64 - EXACT;
                let exp = 8 + j / (1 << MANTISSA_BITS);
                let m = j % (1 << MANTISSA_BITS);
                let shift = exp - u64::from(MANTISSA_BITS);
                let lo = ((1u64 << MANTISSA_BITS) + m) << shift;
                lo as f64 + (1u64 << shift) as f64 / 2.0
            };
            *e = (center.ln() * unit).round() as i32;
        }
        LogTable { entries }
    }

    #[inline]
    pub fn index(v: u64) -> usize {
        if v < EXACT {
            return v as usize;
        }
        let exp = 63 - v.leading_zeros() as u64;
        let m = (v >> (exp - u64::from(MANTISSA_BITS))) & ((1 << MANTISSA_BITS) - 1);
        ((EXACT + (exp - 8) * (1 << MANTISSA_BITS) + m) as usize).min(LOG_TABLE_SIZE - 1)
    }

    #[inline]
    pub fn lookup(&self, v: u64) -> i32 {
        self.entries[Self::index(v)]
    }

    /// `ln((count + 1) / (total + card))` in units of `2^-LOG_FRAC_BITS`.
    #[inline]
    pub fn log_ratio(&self, count: u64, total: u64, card: u64) -> i32 {
        self.lookup(count + 1) - self.lookup(total + card)
    }

    pub fn scale() -> f64 {
        1.0 / f64::from(1u32 << LOG_FRAC_BITS)
    }
}

/// Streaming count-based learner with fixed-width counters.
///
/// Updates touch only integers. When a counter would exceed its width every
/// counter of that node is halved (nonzero counts stay at least 1).
#[derive(Clone, Debug)]
pub struct OnlineState {
    structure: Structure,
    layout: CptLayout,
    max_count: u32,
    counts: Vec<u32>,
    /// Row totals, stored at each row's first index.
    totals: Vec<u64>,
    table: LogTable,
    overflows: usize,
    seen: u64,
}

impl OnlineState {
    pub fn new(structure: Structure, counter_bits: u32) -> Result<Self, BncError> {
        if !(1..=32).contains(&counter_bits) {
            return Err(BncError::Config("counter width must be in 1..=32 bits".into()));
        }
        let layout = CptLayout::new(&structure);
        Ok(OnlineState {
            max_count: (((1u64) << counter_bits) - 1) as u32,
            counts: vec![0; layout.len()],
            totals: vec![0; layout.len()],
            layout,
            structure,
            table: LogTable::new(),
            overflows: 0,
            seen: 0,
        })
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn table(&self) -> &LogTable {
        &self.table
    }

    /// Number of halvings so far.
    pub fn overflows(&self) -> usize {
        self.overflows
    }

    pub fn samples_seen(&self) -> u64 {
        self.seen
    }

    /// Node range `[start, end)` holding entry `k`.
    fn node_range(&self, k: usize) -> (usize, usize) {
        let l = self.layout.n_features();
        if k < self.layout.n_classes() {
            return (0, self.layout.n_classes());
        }
        let i = (0..l).rev().find(|&i| self.layout.offset(i) <= k).expect("entry lies in some node");
        let end = if i + 1 < l { self.layout.offset(i + 1) } else { self.layout.len() };
        (self.layout.offset(i), end)
    }

    fn bump(&mut self, k: usize) {
        if self.counts[k] == self.max_count {
            let (start, end) = self.node_range(k);
            for v in &mut self.counts[start..end] {
                if *v > 0 {
                    *v = (*v / 2).max(1);
                }
            }
            let mut at = start;
            while at < end {
                let (rs, n) = self.layout.row_of(at);
                self.totals[rs] = self.counts[rs..rs + n].iter().map(|&v| u64::from(v)).sum();
                at = rs + n;
            }
            self.overflows += 1;
        }
        self.counts[k] += 1;
        let (rs, _) = self.layout.row_of(k);
        self.totals[rs] += 1;
    }

    /// Adds one labelled, fully observed instance.
    pub fn update(&mut self, x: &[u8], class: usize) -> Result<(), BncError> {
        let l = self.layout.n_features();
        if x.len() != l {
            return Err(BncError::Shape(format!("instance has {} features, expected {l}", x.len())));
        }
        if class >= self.layout.n_classes() {
            return Err(BncError::Shape(format!("class {class} out of range")));
        }
        for (i, &v) in x.iter().enumerate() {
            if v as usize >= self.layout.card(i) {
                return Err(BncError::ValueOutOfRange { feature: i, value: v });
            }
        }
        self.bump(class);
        for i in 0..l {
            let k = self.layout.base(i, x) + class * self.layout.class_stride(i);
            self.bump(k);
        }
        self.seen += 1;
        Ok(())
    }

    /// Current log-parameter of entry `k` in units of `2^-LOG_FRAC_BITS`.
    pub fn log_code(&self, k: usize) -> i32 {
        let (rs, n) = self.layout.row_of(k);
        self.table.log_ratio(u64::from(self.counts[k]), self.totals[rs], n as u64)
    }

    pub fn cpts(&self) -> CptSet {
        let codes: Vec<i64> = (0..self.layout.len()).map(|k| i64::from(self.log_code(k).min(0))).collect();
        let worst = codes.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0);
        let bits = (64 - worst.leading_zeros()).max(1);
        CptSet::from_codes(
            self.layout.clone(),
            Representation::FixedPoint {
                bits,
                scale: LogTable::scale(),
            },
            codes,
        )
        .expect("table codes are nonpositive and in range")
    }

    pub fn classifier(&self) -> BayesNetClassifier {
        BayesNetClassifier {
            structure: self.structure.clone(),
            cpts: self.cpts(),
            gamma: None,
        }
    }
}
