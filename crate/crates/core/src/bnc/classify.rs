use crate::data::DiscreteDataset;

use super::cpt::{CptSet, Representation};
use super::{BncError, Structure};

/// A structure with its tables.
#[derive(Clone, Debug, PartialEq)]
pub struct BayesNetClassifier {
    pub structure: Structure,
    pub cpts: CptSet,
    /// Margin cap used in training, if any.
    pub gamma: Option<f64>,
}

/// Per-class scores: unnormalized log joint probabilities.
#[derive(Clone, Debug, PartialEq)]
pub enum Scores {
    /// Sums of fixed-point codes; multiply by the table scale for natural logs.
    Integer { codes: Vec<i64>, scale: f64 },
    Real(Vec<f64>),
}

impl Scores {
    pub fn to_real(&self) -> Vec<f64> {
        match self {
            Scores::Integer { codes, scale } => codes.iter().map(|&c| c as f64 * scale).collect(),
            Scores::Real(v) => v.clone(),
        }
    }

    /// Normalized class posterior.
    pub fn posterior(&self) -> Vec<f64> {
        let s = self.to_real();
        let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub scores: Scores,
}

fn first_max<T: PartialOrd + Copy>(s: &[T]) -> usize {
    let mut best = 0;
    for (c, &v) in s.iter().enumerate() {
        if v > s[best] {
            best = c;
        }
    }
    best
}

fn log_sum_exp(s: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = s.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + s.map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl BayesNetClassifier {
    pub fn new(structure: Structure, cpts: CptSet, gamma: Option<f64>) -> Result<Self, BncError> {
        if *cpts.layout() != super::CptLayout::new(&structure) {
            return Err(BncError::Shape("tables do not match the structure".into()));
        }
        Ok(BayesNetClassifier { structure, cpts, gamma })
    }

    pub fn n_classes(&self) -> usize {
        self.structure.n_classes()
    }

    /// Predicts the class of one instance.
    ///
    /// Fully observed inputs score each class by summing the looked-up
    /// entries, in integers for fixed-point tables. Missing features are
    /// dropped under naive Bayes and summed out over the tree otherwise.
    /// Ties go to the lower class.
    pub fn classify(&self, x: &[u8], missing: Option<&[bool]>) -> Result<Prediction, BncError> {
        let l = self.structure.n_features();
        if x.len() != l || missing.is_some_and(|m| m.len() != l) {
            return Err(BncError::Shape(format!("instance has {} features, expected {l}", x.len())));
        }
        let is_missing = |i: usize| missing.is_some_and(|m| m[i]);
        for (i, &v) in x.iter().enumerate() {
            if !is_missing(i) && v as usize >= self.structure.cardinalities()[i] {
                return Err(BncError::ValueOutOfRange { feature: i, value: v });
            }
        }
        let any_missing = (0..l).any(is_missing);
        let scores = if !any_missing {
            self.observed_scores(x)
        } else if self.structure.is_naive() {
            Scores::Real(self.naive_scores(x, &is_missing))
        } else {
            Scores::Real(self.tree_scores(x, &is_missing))
        };
        let class = match &scores {
            Scores::Integer { codes, .. } => first_max(codes),
            Scores::Real(v) => first_max(v),
        };
        Ok(Prediction { class, scores })
    }

    fn observed_scores(&self, x: &[u8]) -> Scores {
        let layout = self.cpts.layout();
        let nc = self.n_classes();
        match self.cpts.representation() {
            Representation::FixedPoint { scale, .. } => {
                let t = self.cpts.codes();
                let mut s: Vec<i64> = t[..nc].to_vec();
                for i in 0..layout.n_features() {
                    let (b, stride) = (layout.base(i, x), layout.class_stride(i));
                    for (c, v) in s.iter_mut().enumerate() {
                        *v += t[b + c * stride];
                    }
                }
                Scores::Integer { codes: s, scale }
            }
            _ => {
                let t = self.cpts.logs();
                let mut s: Vec<f64> = t[..nc].to_vec();
                for i in 0..layout.n_features() {
                    let (b, stride) = (layout.base(i, x), layout.class_stride(i));
                    for (c, v) in s.iter_mut().enumerate() {
                        *v += t[b + c * stride];
                    }
                }
                Scores::Real(s)
            }
        }
    }

    fn naive_scores(&self, x: &[u8], is_missing: &dyn Fn(usize) -> bool) -> Vec<f64> {
        let nc = self.n_classes();
        let mut s: Vec<f64> = self.cpts.logs()[..nc].to_vec();
        for i in (0..self.structure.n_features()).filter(|&i| !is_missing(i)) {
            for (c, v) in s.iter_mut().enumerate() {
                *v += self.cpts.log_prob(i, c, 0, x[i] as usize);
            }
        }
        s
    }

    /// Upward sum-product pass over the feature forest, one class at a time.
    fn tree_scores(&self, x: &[u8], is_missing: &dyn Fn(usize) -> bool) -> Vec<f64> {
        let st = &self.structure;
        let cards = st.cardinalities();
        let children = st.children();
        let order = st.topological_order();
        let mut msg: Vec<Vec<f64>> = vec![Vec::new(); st.n_features()];
        let mut out = Vec::with_capacity(self.n_classes());
        for c in 0..self.n_classes() {
            let mut score = self.cpts.class_log_prob(c);
            for &i in order.iter().rev() {
                let pcard = st.parent(i).map_or(1, |p| cards[p]);
                let values: Vec<usize> = if is_missing(i) { (0..cards[i]).collect() } else { vec![x[i] as usize] };
                let m: Vec<f64> = (0..pcard)
                    .map(|pa| {
                        log_sum_exp(values.iter().map(|&v| {
                            self.cpts.log_prob(i, c, pa, v) + children[i].iter().map(|&ch| msg[ch][v]).sum::<f64>()
                        }))
                    })
                    .collect();
                if st.parent(i).is_none() {
                    score += m[0];
                }
                msg[i] = m;
            }
            out.push(score);
        }
        out
    }

    /// Fraction of misclassified rows, honouring the dataset's missing mask.
    pub fn error_rate(&self, data: &DiscreteDataset) -> Result<f64, BncError> {
        let preds = self.predict(data)?;
        let wrong = preds.iter().enumerate().filter(|(n, p)| p.class != data.label(*n)).count();
        Ok(wrong as f64 / data.len().max(1) as f64)
    }

    pub fn predict(&self, data: &DiscreteDataset) -> Result<Vec<Prediction>, BncError> {
        let has_missing = data.has_missing();
        (0..data.len())
            .map(|n| self.classify(data.row(n), has_missing.then(|| data.missing_row(n))))
            .collect()
    }

    /// Storage of the parameters in bits.
    pub fn parameter_bits(&self) -> usize {
        self.cpts.parameter_bits()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnc::{learn_ml, learn_structure_nb, quantize_fixed, CptLayout};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cpts(structure: &Structure, rng: &mut ChaCha8Rng) -> CptSet {
        let layout = CptLayout::new(structure);
        let mut logs = vec![0.0; layout.len()];
        for (start, n) in layout.rows() {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let z: f64 = raw.iter().sum();
            for k in 0..n {
                logs[start + k] = (raw[k] / z).ln();
            }
        }
        CptSet::from_logs(layout, logs).unwrap()
    }

    /// log p(c, x) by direct product over all nodes.
    fn joint(net: &BayesNetClassifier, c: usize, x: &[usize]) -> f64 {
        let mut s = net.cpts.class_log_prob(c);
        for i in 0..x.len() {
            let pa = net.structure.parent(i).map_or(0, |p| x[p]);
            s += net.cpts.log_prob(i, c, pa, x[i]);
        }
        s
    }

    #[test]
    fn observed_argmax_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for parents in [vec![None, None, None], vec![None, Some(0), Some(1)], vec![Some(2), None, Some(1)]] {
            let s = Structure::new(2, vec![2, 2, 2], parents).unwrap();
            let net = BayesNetClassifier::new(s.clone(), random_cpts(&s, &mut rng), None).unwrap();
            for bits in 0..8usize {
                let x: Vec<usize> = (0..3).map(|i| (bits >> i) & 1).collect();
                let xb: Vec<u8> = x.iter().map(|&v| v as u8).collect();
                let p = net.classify(&xb, None).unwrap();
                let j: Vec<f64> = (0..2).map(|c| joint(&net, c, &x)).collect();
                assert_eq!(p.class, first_max(&j));
                for (a, b) in p.scores.to_real().iter().zip(&j) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn all_missing_gives_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for parents in [vec![None, None, None], vec![None, Some(0), Some(0)]] {
            let s = Structure::new(3, vec![2, 3, 2], parents).unwrap();
            let net = BayesNetClassifier::new(s.clone(), random_cpts(&s, &mut rng), None).unwrap();
            let p = net.classify(&[0, 0, 0], Some(&[true; 3])).unwrap();
            let post = p.scores.posterior();
            for c in 0..3 {
                assert!((post[c] - net.cpts.class_log_prob(c).exp()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_missing_set_equals_observed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = Structure::new(2, vec![2, 3], vec![None, Some(0)]).unwrap();
        let net = BayesNetClassifier::new(s.clone(), random_cpts(&s, &mut rng), None).unwrap();
        assert_eq!(net.classify(&[1, 2], Some(&[false, false])).unwrap(), net.classify(&[1, 2], None).unwrap());
    }

    #[test]
    fn tan_missing_internal_node_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // chain 0 -> 1 -> 2, with 1 missing
        let s = Structure::new(3, vec![2, 3, 2], vec![None, Some(0), Some(1)]).unwrap();
        let net = BayesNetClassifier::new(s.clone(), random_cpts(&s, &mut rng), None).unwrap();
        for x0 in 0..2 {
            for x2 in 0..2 {
                let p = net.classify(&[x0 as u8, 0, x2 as u8], Some(&[false, true, false])).unwrap();
                let got = p.scores.to_real();
                for c in 0..3 {
                    let brute: f64 = (0..3).map(|x1| joint(&net, c, &[x0, x1, x2]).exp()).sum();
                    assert!((got[c] - brute.ln()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn integer_path_reads_codes_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = learn_structure_nb(3, &[2, 4, 3]).unwrap();
        let mut q = quantize_fixed(&random_cpts(&s, &mut rng), 6).unwrap();
        let expected_codes = q.codes().to_vec();
        // poison the decoded values: a decode on this path would surface as NaN
        q.logs.iter_mut().for_each(|v| *v = f64::NAN);
        let net = BayesNetClassifier::new(s.clone(), q, None).unwrap();
        let layout = CptLayout::new(&s);
        for _ in 0..50 {
            let x = [rng.gen_range(0..2u8), rng.gen_range(0..4), rng.gen_range(0..3)];
            let p = net.classify(&x, None).unwrap();
            let Scores::Integer { codes, .. } = &p.scores else { panic!("expected integer scores") };
            for c in 0..3 {
                let sum: i64 = expected_codes[c]
                    + (0..3).map(|i| expected_codes[layout.index(i, c, 0, x[i] as usize)]).sum::<i64>();
                assert_eq!(codes[c], sum);
            }
            assert_eq!(p.class, first_max(codes));
        }
    }

    #[test]
    fn integer_ties_go_to_lower_class() {
        let s = learn_structure_nb(2, &[2]).unwrap();
        let cpts = CptSet::from_codes(
            CptLayout::new(&s),
            Representation::FixedPoint { bits: 4, scale: 0.1 },
            vec![-3, -3, -1, -2, -1, -2],
        )
        .unwrap();
        let net = BayesNetClassifier::new(s, cpts, None).unwrap();
        assert_eq!(net.classify(&[0], None).unwrap().class, 0);
    }

    #[test]
    fn rejects_out_of_range_values() {
        let s = learn_structure_nb(2, &[2]).unwrap();
        let d = DiscreteDataset::new(vec![0, 1], vec![2], vec![0, 1], 2).unwrap();
        let net = BayesNetClassifier::new(s.clone(), learn_ml(&d, &s, 1.0).unwrap(), None).unwrap();
        assert!(net.classify(&[2], None).is_err());
        assert!(net.classify(&[7], Some(&[true])).is_ok());
    }
}
