use crate::data::DiscreteDataset;

use super::HarnessError;

/// Multinomial logistic regression on one-hot encoded discrete features,
/// fitted by full-batch gradient descent with an L2 penalty.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticRegression {
    offsets: Vec<usize>,
    n_classes: usize,
    /// `n_classes × (features + 1)`, bias last.
    weights: Vec<f64>,
    dim: usize,
}

impl LogisticRegression {
    pub fn fit(data: &DiscreteDataset, l2: f64, iterations: usize, step: f64) -> Result<Self, HarnessError> {
        if data.is_empty() {
            return Err(HarnessError::Config("empty training set".into()));
        }
        if data.has_missing() {
            return Err(HarnessError::Config("logistic regression needs complete rows".into()));
        }
        let mut offsets = Vec::with_capacity(data.n_features());
        let mut dim = 0;
        for &c in data.cardinalities() {
            offsets.push(dim);
            dim += c;
        }
        let c = data.n_classes();
        let mut model = LogisticRegression {
            offsets,
            n_classes: c,
            weights: vec![0.0; c * (dim + 1)],
            dim,
        };
        let n = data.len() as f64;
        let mut grad = vec![0.0; model.weights.len()];
        for _ in 0..iterations {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for i in 0..data.len() {
                let p = model.probabilities(data.row(i));
                for k in 0..c {
                    let d = p[k] - f64::from(u8::from(k == data.label(i)));
                    let base = k * (dim + 1);
                    for (j, &v) in data.row(i).iter().enumerate() {
                        grad[base + model.offsets[j] + v as usize] += d;
                    }
                    grad[base + dim] += d;
                }
            }
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w -= step * (g / n + l2 * *w);
            }
        }
        Ok(model)
    }

    fn probabilities(&self, x: &[u8]) -> Vec<f64> {
        let mut s: Vec<f64> = (0..self.n_classes)
            .map(|k| {
                let base = k * (self.dim + 1);
                x.iter().enumerate().map(|(j, &v)| self.weights[base + self.offsets[j] + v as usize]).sum::<f64>()
                    + self.weights[base + self.dim]
            })
            .collect();
        let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        s.iter_mut().for_each(|v| *v = (*v - m).exp());
        let z: f64 = s.iter().sum();
        s.iter_mut().for_each(|v| *v /= z);
        s
    }

    /// Most probable class; ties go to the lowest.
    pub fn predict(&self, x: &[u8]) -> usize {
        let p = self.probabilities(x);
        (0..p.len()).fold(0, |b, k| if p[k] > p[b] { k } else { b })
    }

    pub fn error_rate(&self, data: &DiscreteDataset) -> f64 {
        let wrong = (0..data.len()).filter(|&i| self.predict(data.row(i)) != data.label(i)).count();
        wrong as f64 / data.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_a_single_informative_feature() {
        let mut f = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            f.extend([c as u8, (i % 3) as u8]);
            y.push(c);
        }
        let d = DiscreteDataset::new(f, vec![2, 3], y, 2).unwrap();
        let lr = LogisticRegression::fit(&d, 1e-3, 200, 1.0).unwrap();
        assert_eq!(lr.error_rate(&d), 0.0);
    }

    #[test]
    fn constant_data_predicts_majority() {
        let d = DiscreteDataset::new(vec![0; 5], vec![1], vec![1, 1, 1, 0, 1], 2).unwrap();
        let lr = LogisticRegression::fit(&d, 0.0, 100, 1.0).unwrap();
        assert_eq!(lr.predict(&[0]), 1);
    }
}
