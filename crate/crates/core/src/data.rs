//! Dataset ingestion: IDX containers, integer CSV tables, down-sampling,
//! discretization and missing-at-random masks.

use std::fs;
use std::io::Read;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad IDX magic {0:#010x}")]
    BadMagic(u32),
    #[error("truncated input: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing bytes: expected {expected}, found {found}")]
    Trailing { expected: usize, found: usize },
    #[error("image dimensions {0}x{1} are not even")]
    OddDimensions(usize, usize),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("empty reference set")]
    EmptyReference,
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Decoded IDX container.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

const IDX_LABELS: u32 = 0x0000_0801;
const IDX_IMAGES: u32 = 0x0000_0803;

/// Parses an unsigned-byte IDX file (labels `0x801` or images `0x803`).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor, DataError> {
    let word = |at: usize| -> Result<u32, DataError> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or(DataError::Truncated {
                expected: at + 4,
                found: bytes.len(),
            })
    };
    let magic = word(0)?;
    let ndims = match magic {
        IDX_LABELS => 1,
        IDX_IMAGES => 3,
        other => return Err(DataError::BadMagic(other)),
    };
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        dims.push(word(4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * ndims;
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| DataError::Invalid("IDX dimensions overflow".into()))?;
    let expected = header + len;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(DataError::Trailing {
            expected,
            found: bytes.len(),
        });
    }
    Ok(IdxTensor {
        dims,
        data: bytes[header..].to_vec(),
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_idx_file(path: &Path) -> Result<IdxTensor, DataError> {
    parse_idx(&read_file(path)?)
}

/// 2×2 mean pooling over a stack of `n` images of `h × w` bytes.
/// Means are rounded half up, so `127.5` becomes `128`.
pub fn downsample2x(images: &[u8], n: usize, h: usize, w: usize) -> Result<Vec<u8>, DataError> {
    if h % 2 != 0 || w % 2 != 0 {
        return Err(DataError::OddDimensions(h, w));
    }
    if images.len() != n * h * w {
        return Err(DataError::Truncated {
            expected: n * h * w,
            found: images.len(),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * oh * ow);
    for img in images.chunks_exact(h * w) {
        for r in 0..oh {
            for c in 0..ow {
                let at = |dr: usize, dc: usize| img[(2 * r + dr) * w + 2 * c + dc] as u32;
                let sum = at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1);
                out.push(((sum + 2) / 4) as u8);
            }
        }
    }
    Ok(out)
}

/// Uniform-width binning of `0..=255` into `levels` bins.
pub fn discretize(values: &[u8], levels: usize) -> Vec<u8> {
    assert!((2..=256).contains(&levels), "levels must be in 2..=256");
    values.iter().map(|&v| (v as usize * levels / 256) as u8).collect()
}

/// Categorical features with a per-cell missing mask and integer labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscreteDataset {
    n_features: usize,
    cardinalities: Vec<usize>,
    n_classes: usize,
    features: Vec<u8>,
    labels: Vec<usize>,
    missing: Vec<bool>,
}

impl DiscreteDataset {
    /// Fully observed dataset. Features are row-major `n × L`.
    pub fn new(
        features: Vec<u8>,
        cardinalities: Vec<usize>,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self, DataError> {
        let missing = vec![false; features.len()];
        DiscreteDataset::with_missing(features, cardinalities, labels, n_classes, missing)
    }

    pub fn with_missing(
        features: Vec<u8>,
        cardinalities: Vec<usize>,
        labels: Vec<usize>,
        n_classes: usize,
        missing: Vec<bool>,
    ) -> Result<Self, DataError> {
        let l = cardinalities.len();
        if l == 0 {
            return Err(DataError::Invalid("dataset needs at least one feature".into()));
        }
        if features.len() != labels.len() * l {
            return Err(DataError::Invalid(format!(
                "{} feature cells for {} rows of {} features",
                features.len(),
                labels.len(),
                l
            )));
        }
        if missing.len() != features.len() {
            return Err(DataError::Invalid("missing mask shape differs from features".into()));
        }
        if let Some(&c) = cardinalities.iter().find(|&&c| c == 0 || c > 256) {
            return Err(DataError::Invalid(format!("cardinality {c} outside 1..=256")));
        }
        if n_classes == 0 {
            return Err(DataError::Invalid("no classes".into()));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(DataError::Invalid(format!("label {y} >= {n_classes} classes")));
        }
        for (i, (&v, &m)) in features.iter().zip(&missing).enumerate() {
            if !m && v as usize >= cardinalities[i % l] {
                return Err(DataError::Invalid(format!(
                    "value {v} of feature {} exceeds cardinality {}",
                    i % l,
                    cardinalities[i % l]
                )));
            }
        }
        Ok(DiscreteDataset {
            n_features: l,
            cardinalities,
            n_classes,
            features,
            labels,
            missing,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn missing_row(&self, i: usize) -> &[bool] {
        &self.missing[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    /// Same data with a new missing mask.
    pub fn masked(&self, mask: Vec<bool>) -> Result<Self, DataError> {
        DiscreteDataset::with_missing(
            self.features.clone(),
            self.cardinalities.clone(),
            self.labels.clone(),
            self.n_classes,
            mask,
        )
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut features = Vec::with_capacity(rows.len() * self.n_features);
        let mut missing = Vec::with_capacity(rows.len() * self.n_features);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            missing.extend_from_slice(self.missing_row(r));
            labels.push(self.labels[r]);
        }
        DiscreteDataset {
            n_features: self.n_features,
            cardinalities: self.cardinalities.clone(),
            n_classes: self.n_classes,
            features,
            labels,
            missing,
        }
    }

    /// Keeps only the listed feature columns, in order.
    pub fn select_features(&self, keep: &[usize]) -> Self {
        let mut features = Vec::with_capacity(self.len() * keep.len());
        let mut missing = Vec::with_capacity(self.len() * keep.len());
        for i in 0..self.len() {
            let (row, mrow) = (self.row(i), self.missing_row(i));
            for &j in keep {
                features.push(row[j]);
                missing.push(mrow[j]);
            }
        }
        DiscreteDataset {
            n_features: keep.len(),
            cardinalities: keep.iter().map(|&j| self.cardinalities[j]).collect(),
            n_classes: self.n_classes,
            features,
            labels: self.labels.clone(),
            missing,
        }
    }

    /// Indices of features taking more than one observed value.
    pub fn non_constant_features(&self) -> Vec<usize> {
        (0..self.n_features)
            .filter(|&j| {
                let mut first = None;
                (0..self.len()).any(|i| {
                    if self.missing_row(i)[j] {
                        return false;
                    }
                    let v = self.row(i)[j];
                    match first {
                        None => {
                            first = Some(v);
                            false
                        }
                        Some(f) => f != v,
                    }
                })
            })
            .collect()
    }

    /// Shuffled split; returns `(train, test)`.
    pub fn split(&self, test_fraction: f64, seed: u64) -> (Self, Self) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = ((self.len() as f64) * test_fraction).round() as usize;
        let (test, train) = idx.split_at(n_test.min(self.len()));
        (self.subset(train), self.subset(test))
    }

    /// Fraction of rows in the most frequent class.
    pub fn majority_rate(&self) -> f64 {
        let mut counts = vec![0usize; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        *counts.iter().max().unwrap_or(&0) as f64 / self.len().max(1) as f64
    }
}

/// Each cell independently missing with probability `rate`.
pub fn mar_mask(dataset: &DiscreteDataset, rate: f64, seed: u64) -> Vec<bool> {
    assert!((0.0..=1.0).contains(&rate), "rate must be in [0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dataset.len() * dataset.n_features())
        .map(|_| rng.gen::<f64>() < rate)
        .collect()
}

/// Fills every missing cell of `query` with the majority value of that cell
/// among the `k` nearest rows of `reference`.
///
/// Distance is the Hamming distance over cells observed in both rows.
/// Distance ties keep the lower reference index; value ties keep the lower
/// value.
pub fn knn_impute(query: &DiscreteDataset, reference: &DiscreteDataset, k: usize) -> Result<DiscreteDataset, DataError> {
    if reference.is_empty() {
        return Err(DataError::EmptyReference);
    }
    if reference.n_features() != query.n_features() {
        return Err(DataError::Invalid("reference has a different feature count".into()));
    }
    let k = k.max(1);
    let l = query.n_features();
    let mut features = query.features.clone();
    let mut dist: Vec<(usize, usize)> = Vec::with_capacity(reference.len());
    for i in 0..query.len() {
        let (q, qm) = (query.row(i), query.missing_row(i));
        if !qm.iter().any(|&m| m) {
            continue;
        }
        dist.clear();
        for r in 0..reference.len() {
            let (row, rm) = (reference.row(r), reference.missing_row(r));
            let d = (0..l).filter(|&j| !qm[j] && !rm[j] && q[j] != row[j]).count();
            dist.push((d, r));
        }
        dist.sort_unstable();
        for j in (0..l).filter(|&j| qm[j]) {
            let mut votes = vec![0usize; query.cardinalities()[j]];
            let mut used = 0;
            for &(_, r) in &dist {
                if used == k {
                    break;
                }
                if reference.missing_row(r)[j] {
                    continue;
                }
                let v = reference.row(r)[j] as usize;
                if v < votes.len() {
                    votes[v] += 1;
                    used += 1;
                }
            }
            let best = votes
                .iter()
                .enumerate()
                .fold((0, 0), |best, (v, &c)| if c > best.1 { (v, c) } else { best });
            features[i * l + j] = best.0 as u8;
        }
    }
    DiscreteDataset::new(
        features,
        query.cardinalities.clone(),
        query.labels.clone(),
        query.n_classes,
    )
}

/// Reads an integer table: header row, `?` for missing cells, label last.
/// Cardinalities and class count are one past the largest observed value.
pub fn read_csv<R: Read>(reader: R) -> Result<DiscreteDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let width = rdr.headers()?.len();
    if width < 2 {
        return Err(DataError::Invalid("need at least one feature and a label column".into()));
    }
    let l = width - 1;
    let (mut features, mut missing, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    let mut cards = vec![1usize; l];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(DataError::Invalid(format!("row {} has {} cells, expected {width}", line + 2, rec.len())));
        }
        for (j, cell) in rec.iter().take(l).enumerate() {
            if cell == "?" {
                features.push(0);
                missing.push(true);
                continue;
            }
            let v: u8 = cell
                .parse()
                .map_err(|_| DataError::Invalid(format!("row {}: bad cell {cell:?}", line + 2)))?;
            cards[j] = cards[j].max(v as usize + 1);
            features.push(v);
            missing.push(false);
        }
        let y: usize = rec[l]
            .parse()
            .map_err(|_| DataError::Invalid(format!("row {}: bad label {:?}", line + 2, &rec[l])))?;
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(DataError::Invalid("no data rows".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    DiscreteDataset::with_missing(features, cards, labels, n_classes, missing)
}

pub fn read_csv_file(path: &Path) -> Result<DiscreteDataset, DataError> {
    read_csv(read_file(path)?.as_slice())
}

/// Real-valued inputs with class labels, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseDataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl DenseDataset {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self, DataError> {
        if inputs.nrows() != labels.len() {
            return Err(DataError::Invalid(format!("{} rows but {} labels", inputs.nrows(), labels.len())));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(DataError::Invalid(format!("label {y} out of range")));
        }
        Ok(DenseDataset {
            inputs,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        DenseDataset {
            inputs: self.inputs.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Rows `start..end`.
    pub fn range(&self, start: usize, end: usize) -> Self {
        self.subset(&(start..end).collect::<Vec<_>>())
    }
}

/// MNIST images and labels as raw bytes.
#[derive(Clone, Debug)]
pub struct Mnist {
    pub rows: usize,
    pub cols: usize,
    pub train_images: Vec<u8>,
    pub train_labels: Vec<u8>,
    pub test_images: Vec<u8>,
    pub test_labels: Vec<u8>,
}

impl Mnist {
    /// Loads the four standard IDX files from `root`.
    pub fn load(root: &Path) -> Result<Self, DataError> {
        let images = |name: &str| read_idx_file(&root.join(name));
        let train = images("train-images-idx3-ubyte")?;
        let train_labels = images("train-labels-idx1-ubyte")?;
        let test = images("t10k-images-idx3-ubyte")?;
        let test_labels = images("t10k-labels-idx1-ubyte")?;
        for (img, lab) in [(&train, &train_labels), (&test, &test_labels)] {
            if img.dims.len() != 3 || lab.dims.len() != 1 || img.dims[0] != lab.dims[0] {
                return Err(DataError::Invalid("image and label counts differ".into()));
            }
        }
        if train.dims[1..] != test.dims[1..] {
            return Err(DataError::Invalid("train and test image sizes differ".into()));
        }
        Ok(Mnist {
            rows: train.dims[1],
            cols: train.dims[2],
            train_images: train.data,
            train_labels: train_labels.data,
            test_images: test.data,
            test_labels: test_labels.data,
        })
    }

    pub fn n_train(&self) -> usize {
        self.train_labels.len()
    }

    pub fn n_test(&self) -> usize {
        self.test_labels.len()
    }

    /// Down-sampled copy (`14 × 14` for the standard files).
    pub fn downsampled(&self) -> Result<Self, DataError> {
        Ok(Mnist {
            rows: self.rows / 2,
            cols: self.cols / 2,
            train_images: downsample2x(&self.train_images, self.n_train(), self.rows, self.cols)?,
            train_labels: self.train_labels.clone(),
            test_images: downsample2x(&self.test_images, self.n_test(), self.rows, self.cols)?,
            test_labels: self.test_labels.clone(),
        })
    }

    /// Pixels scaled to `[0, 1]` as `v / 255`.
    pub fn dense(&self) -> Result<(DenseDataset, DenseDataset), DataError> {
        let px = self.rows * self.cols;
        let make = |images: &[u8], labels: &[u8]| {
            let x = Array2::from_shape_vec((labels.len(), px), images.iter().map(|&v| f64::from(v) / 255.0).collect())
                .map_err(|e| DataError::Invalid(e.to_string()))?;
            DenseDataset::new(x, labels.iter().map(|&y| y as usize).collect(), 10)
        };
        Ok((
            make(&self.train_images, &self.train_labels)?,
            make(&self.test_images, &self.test_labels)?,
        ))
    }

    /// Gray levels binned into `levels` categories per pixel.
    pub fn discrete(&self, levels: usize) -> Result<(DiscreteDataset, DiscreteDataset), DataError> {
        let px = self.rows * self.cols;
        let make = |images: &[u8], labels: &[u8]| {
            DiscreteDataset::new(
                discretize(images, levels),
                vec![levels; px],
                labels.iter().map(|&y| y as usize).collect(),
                10,
            )
        };
        Ok((
            make(&self.train_images, &self.train_labels)?,
            make(&self.test_images, &self.test_labels)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(dims: [u32; 3], payload: &[u8]) -> Vec<u8> {
        let mut b = IDX_IMAGES.to_be_bytes().to_vec();
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn parses_small_image_file() {
        let t = parse_idx(&idx_images([2, 2, 2], &[1, 2, 3, 4, 5, 6, 7, 8])).unwrap();
        assert_eq!(t.dims, vec![2, 2, 2]);
        assert_eq!(t.data, vec![1, 2, 3, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn parses_labels() {
        let mut b = IDX_LABELS.to_be_bytes().to_vec();
        b.extend_from_slice(&3u32.to_be_bytes());
        b.extend_from_slice(&[7, 0, 9]);
        assert_eq!(parse_idx(&b).unwrap().dims, vec![3]);
    }

    #[test]
    fn rejects_truncated_trailing_and_bad_magic() {
        let good = idx_images([2, 2, 2], &[0; 8]);
        assert!(matches!(parse_idx(&good[..good.len() - 1]), Err(DataError::Truncated { .. })));
        assert!(matches!(parse_idx(&good[..6]), Err(DataError::Truncated { .. })));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(parse_idx(&long), Err(DataError::Trailing { .. })));
        let mut bad = good;
        bad[3] = 0x02;
        assert!(matches!(parse_idx(&bad), Err(DataError::BadMagic(0x802))));
    }

    #[test]
    fn downsample_constant_and_checkerboard() {
        let img = vec![77u8; 16];
        assert_eq!(downsample2x(&img, 1, 4, 4).unwrap(), vec![77; 4]);
        let check: Vec<u8> = (0..16).map(|i| if (i / 4 + i % 4) % 2 == 0 { 0 } else { 255 }).collect();
        assert_eq!(downsample2x(&check, 1, 4, 4).unwrap(), vec![128; 4]);
        assert!(matches!(downsample2x(&[0; 15], 1, 3, 5), Err(DataError::OddDimensions(3, 5))));
    }

    #[test]
    fn downsample_matches_scalar_pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let imgs: Vec<u8> = (0..3 * 28 * 28).map(|_| rng.gen()).collect();
        let out = downsample2x(&imgs, 3, 28, 28).unwrap();
        for n in 0..3 {
            for r in 0..14 {
                for c in 0..14 {
                    let mut s = 0f64;
                    for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        s += imgs[n * 784 + (2 * r + dr) * 28 + 2 * c + dc] as f64;
                    }
                    let expected = (s / 4.0 + 0.5).floor() as u8;
                    assert_eq!(out[n * 196 + r * 14 + c], expected);
                }
            }
        }
    }

    #[test]
    fn discretize_edges_and_oracle() {
        assert_eq!(discretize(&[0, 255], 4), vec![0, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<u8> = (0..20).map(|_| rng.gen()).collect();
        let got = discretize(&v, 4);
        for (x, b) in v.iter().zip(got) {
            assert_eq!(b as f64, (*x as f64 * 4.0 / 256.0).floor());
        }
    }

    fn toy() -> DiscreteDataset {
        DiscreteDataset::new(vec![0, 1, 1, 0, 1, 1, 0, 0], vec![2, 2], vec![0, 1, 1, 0], 2).unwrap()
    }

    #[test]
    fn dataset_invariants() {
        assert!(DiscreteDataset::new(vec![0, 2], vec![2, 2], vec![0], 1).is_err());
        assert!(DiscreteDataset::new(vec![0, 1], vec![2, 2], vec![3], 2).is_err());
        assert!(DiscreteDataset::new(vec![0, 1, 0], vec![2, 2], vec![0], 1).is_err());
        // out-of-range values are allowed in missing cells
        assert!(DiscreteDataset::with_missing(vec![0, 9], vec![2, 2], vec![0], 1, vec![false, true]).is_ok());
    }

    #[test]
    fn mask_rates() {
        let d = toy();
        assert!(mar_mask(&d, 0.0, 1).iter().all(|&m| !m));
        assert!(mar_mask(&d, 1.0, 1).iter().all(|&m| m));
        let big = DiscreteDataset::new(vec![0; 100_000], vec![1; 10], vec![0; 10_000], 1).unwrap();
        let m = mar_mask(&big, 0.3, 42);
        let rate = m.iter().filter(|&&x| x).count() as f64 / m.len() as f64;
        let sigma = (0.3 * 0.7 / 1e5f64).sqrt();
        assert!((rate - 0.3).abs() < 3.0 * sigma, "rate {rate}");
        assert_eq!(m, mar_mask(&big, 0.3, 42));
    }

    #[test]
    fn knn_fills_from_duplicate() {
        let reference = DiscreteDataset::new(vec![0, 1, 2, 1, 0, 2, 2, 2, 0], vec![3, 3, 3], vec![0, 1, 0], 2).unwrap();
        let q = reference.subset(&[1]).masked(vec![false, true, false]).unwrap();
        let filled = knn_impute(&q, &reference, 1).unwrap();
        assert_eq!(filled.row(0), &[1, 0, 2]);
        assert!(!filled.has_missing());
    }

    #[test]
    fn knn_value_tie_takes_lowest() {
        // two equidistant neighbours voting 1 and 0
        let reference = DiscreteDataset::new(vec![0, 1, 0, 0], vec![2, 2], vec![0, 0], 1).unwrap();
        let q = DiscreteDataset::with_missing(vec![0, 0], vec![2, 2], vec![0], 1, vec![false, true]).unwrap();
        assert_eq!(knn_impute(&q, &reference, 2).unwrap().row(0), &[0, 0]);
    }

    #[test]
    fn knn_hand_computed_neighbours() {
        // 10 reference rows over 3 ternary features
        #[rustfmt::skip]
        let rows = vec![
            0, 0, 0,
            0, 0, 1,
            0, 1, 1,
            1, 1, 1,
            2, 2, 2,
            2, 2, 1,
            2, 1, 0,
            1, 0, 2,
            0, 2, 2,
            1, 2, 0,
        ];
        let reference = DiscreteDataset::new(rows, vec![3, 3, 3], vec![0; 10], 1).unwrap();
        // query (0, ?, 1): distances on features 0 and 2
        // row0: 1, row1: 0, row2: 0, row3: 1, row4: 2, row5: 1, row6: 2, row7: 2, row8: 1, row9: 2
        // 3 nearest: rows 1, 2 (d=0), then row 0 (d=1, lowest index)
        // feature-1 values: 0, 1, 0 -> majority 0
        let q = DiscreteDataset::with_missing(vec![0, 0, 1], vec![3, 3, 3], vec![0], 1, vec![false, true, false]).unwrap();
        assert_eq!(knn_impute(&q, &reference, 3).unwrap().row(0), &[0, 0, 1]);
        // with k = 5: rows 1, 2, 0, 3, 5 -> values 0, 1, 0, 1, 2 -> tie 0/1 -> 0
        assert_eq!(knn_impute(&q, &reference, 5).unwrap().row(0), &[0, 0, 1]);
        // query (?, 2, ?): distance on feature 1 only; rows 4, 5, 8 have 2
        let q = DiscreteDataset::with_missing(vec![0, 2, 0], vec![3, 3, 3], vec![0], 1, vec![true, false, true]).unwrap();
        assert_eq!(knn_impute(&q, &reference, 3).unwrap().row(0), &[2, 2, 2]);
        let empty = reference.subset(&[]);
        assert!(matches!(knn_impute(&q, &empty, 3), Err(DataError::EmptyReference)));
    }

    #[test]
    fn csv_with_missing_cells() {
        let text = "a,b,class\n0,2,1\n?,1,0\n1,0,2\n";
        let d = read_csv(text.as_bytes()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.cardinalities(), &[2, 3]);
        assert_eq!(d.n_classes(), 3);
        assert_eq!(d.missing_row(1), &[true, false]);
        assert!(read_csv("a,class\n0,x\n".as_bytes()).is_err());
        assert!(read_csv("a,class\n0\n".as_bytes()).is_err());
        assert!(read_csv("a,class\n".as_bytes()).is_err());
    }

    #[test]
    fn constant_features_and_split() {
        let d = DiscreteDataset::new(vec![0, 1, 0, 0, 0, 1], vec![2, 2], vec![0, 1, 0], 2).unwrap();
        assert_eq!(d.non_constant_features(), vec![1]);
        let (tr, te) = d.split(1.0 / 3.0, 1);
        assert_eq!((tr.len(), te.len()), (2, 1));
        assert!((d.majority_rate() - 2.0 / 3.0).abs() < 1e-12);
    }
}
