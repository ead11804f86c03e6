use crate::data::DiscreteDataset;

use super::cpt::{CptLayout, CptSet};
use super::{BncError, Structure};

/// Laplace smoothing used when none is given.
pub const DEFAULT_SMOOTHING: f64 = 1.0;

/// Margin caps tried when tuning maximum-margin learning.
pub const GAMMA_GRID: [f64; 4] = [2.0, 5.0, 10.0, 50.0];

/// Closed-form smoothed maximum likelihood:
/// `p = (count + eps) / (row total + eps * card)`.
pub fn learn_ml(data: &DiscreteDataset, structure: &Structure, eps: f64) -> Result<CptSet, BncError> {
    if data.is_empty() {
        return Err(BncError::EmptyDataset);
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(BncError::Config("smoothing must be positive".into()));
    }
    structure.check_compatible(data)?;
    if data.has_missing() {
        return Err(BncError::MissingValues);
    }
    let layout = CptLayout::new(structure);
    let mut counts = vec![0.0; layout.len()];
    for n in 0..data.len() {
        let (row, c) = (data.row(n), data.label(n));
        counts[c] += 1.0;
        for i in 0..layout.n_features() {
            counts[layout.base(i, row) + c * layout.class_stride(i)] += 1.0;
        }
    }
    Ok(normalize_counts(layout, &counts, eps))
}

pub(crate) fn normalize_counts(layout: CptLayout, counts: &[f64], eps: f64) -> CptSet {
    let mut logs = vec![0.0; layout.len()];
    for (start, n) in layout.rows() {
        let row = &counts[start..start + n];
        let total: f64 = row.iter().sum::<f64>() + eps * n as f64;
        for k in 0..n {
            logs[start + k] = ((row[k] + eps) / total).ln().min(0.0);
        }
    }
    CptSet::from_logs(layout, logs).expect("normalized counts are valid log-probabilities")
}

/// Settings for the discriminative learners.
///
/// Optimization is full-batch gradient ascent on softmax-parametrized logits.
/// A step that lowers the objective by more than `tolerance` is rejected and
/// halved; an accepted step grows by `growth`. With a validation set the
/// parameters with the lowest validation error are returned and training stops
/// after `patience` epochs without improvement.
#[derive(Clone, Debug)]
pub struct OptimConfig<'a> {
    pub step: f64,
    pub epochs: usize,
    pub growth: f64,
    pub tolerance: f64,
    pub min_step: f64,
    pub patience: usize,
    pub smoothing: f64,
    pub validation: Option<&'a DiscreteDataset>,
}

impl Default for OptimConfig<'_> {
    fn default() -> Self {
        OptimConfig {
            step: 1.0,
            epochs: 200,
            growth: 1.2,
            tolerance: 1e-12,
            min_step: 1e-10,
            patience: 20,
            smoothing: DEFAULT_SMOOTHING,
            validation: None,
        }
    }
}

/// Result of an iterative learner.
#[derive(Clone, Debug)]
pub struct Fit {
    pub cpts: CptSet,
    /// Objective (per-sample mean) at the returned parameters.
    pub objective: f64,
    /// Objective after every epoch.
    pub history: Vec<f64>,
    /// Validation error after every epoch, when a validation set was given.
    pub validation_error: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Objective {
    ConditionalLikelihood,
    Margin { log_gamma: f64 },
    Hybrid { lambda: f64, log_gamma: f64, eps: f64 },
}

/// Per-sample class-0 entry indices of a fully observed dataset.
pub(crate) struct Design {
    n_classes: usize,
    n_features: usize,
    strides: Vec<usize>,
    bases: Vec<u32>,
    labels: Vec<usize>,
}

impl Design {
    pub(crate) fn new(layout: &CptLayout, data: &DiscreteDataset) -> Result<Self, BncError> {
        if data.has_missing() {
            return Err(BncError::MissingValues);
        }
        let l = layout.n_features();
        let mut bases = Vec::with_capacity(data.len() * l);
        for n in 0..data.len() {
            let row = data.row(n);
            bases.extend((0..l).map(|i| layout.base(i, row) as u32));
        }
        Ok(Design {
            n_classes: layout.n_classes(),
            n_features: l,
            strides: (0..l).map(|i| layout.class_stride(i)).collect(),
            bases,
            labels: data.labels().to_vec(),
        })
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn scores(&self, w: &[f64], n: usize, out: &mut [f64]) {
        out.copy_from_slice(&w[..self.n_classes]);
        let bases = &self.bases[n * self.n_features..(n + 1) * self.n_features];
        for (&b, &s) in bases.iter().zip(&self.strides) {
            let mut k = b as usize;
            for o in out.iter_mut() {
                *o += w[k];
                k += s;
            }
        }
    }

    fn scatter(&self, g: &mut [f64], n: usize, class: usize, amount: f64) {
        g[class] += amount;
        let bases = &self.bases[n * self.n_features..(n + 1) * self.n_features];
        for (&b, &s) in bases.iter().zip(&self.strides) {
            g[b as usize + class * s] += amount;
        }
    }

    pub(crate) fn error_rate(&self, w: &[f64]) -> f64 {
        let mut s = vec![0.0; self.n_classes];
        let wrong = (0..self.len())
            .filter(|&n| {
                self.scores(w, n, &mut s);
                argmax(&s) != self.labels[n]
            })
            .count();
        wrong as f64 / self.len().max(1) as f64
    }
}

pub(crate) fn argmax(s: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in s.iter().enumerate() {
        if v > s[best] {
            best = c;
        }
    }
    best
}

fn log_sum_exp(s: &[f64]) -> f64 {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Best competitor of `label`, lowest index on ties.
fn runner_up(s: &[f64], label: usize) -> usize {
    let mut best = usize::MAX;
    for (c, &v) in s.iter().enumerate() {
        if c != label && (best == usize::MAX || v > s[best]) {
            best = c;
        }
    }
    best
}

/// Row-wise log-softmax of the logits.
pub(crate) fn log_softmax(layout: &CptLayout, theta: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; theta.len()];
    for (start, n) in layout.rows() {
        let z = log_sum_exp(&theta[start..start + n]);
        for k in start..start + n {
            w[k] = (theta[k] - z).min(0.0);
        }
    }
    w
}

/// Mean objective and, when `grad` is given, its gradient with respect to the
/// log-probabilities `w`.
pub(crate) fn objective_w(design: &Design, w: &[f64], obj: Objective, mut grad: Option<&mut [f64]>) -> f64 {
    let nc = design.n_classes;
    let inv_n = 1.0 / design.len() as f64;
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let mut s = vec![0.0; nc];
    let mut total = 0.0;
    for n in 0..design.len() {
        design.scores(w, n, &mut s);
        let y = design.labels[n];
        match obj {
            Objective::ConditionalLikelihood => {
                let z = log_sum_exp(&s);
                total += s[y] - z;
                if let Some(g) = grad.as_deref_mut() {
                    design.scatter(g, n, y, inv_n);
                    for c in 0..nc {
                        design.scatter(g, n, c, -(s[c] - z).exp() * inv_n);
                    }
                }
            }
            Objective::Margin { log_gamma } => {
                let r = runner_up(&s, y);
                let margin = s[y] - s[r];
                if margin < log_gamma {
                    total += margin;
                    if let Some(g) = grad.as_deref_mut() {
                        design.scatter(g, n, y, inv_n);
                        design.scatter(g, n, r, -inv_n);
                    }
                } else {
                    total += log_gamma;
                }
            }
            Objective::Hybrid { lambda, log_gamma, .. } => {
                total += lambda * s[y];
                let r = runner_up(&s, y);
                let margin = s[y] - s[r];
                let capped = margin < log_gamma;
                total += (1.0 - lambda) * if capped { margin } else { log_gamma };
                if let Some(g) = grad.as_deref_mut() {
                    design.scatter(g, n, y, lambda * inv_n);
                    if capped {
                        design.scatter(g, n, y, (1.0 - lambda) * inv_n);
                        design.scatter(g, n, r, -(1.0 - lambda) * inv_n);
                    }
                }
            }
        }
    }
    let mut value = total * inv_n;
    if let Objective::Hybrid { lambda, eps, .. } = obj {
        value += lambda * eps * w.iter().sum::<f64>() * inv_n;
        if let Some(g) = grad.as_deref_mut() {
            for v in g.iter_mut() {
                *v += lambda * eps * inv_n;
            }
        }
    }
    value
}

/// Objective as a function of the logits, with its gradient.
pub(crate) fn objective_theta(
    layout: &CptLayout,
    design: &Design,
    theta: &[f64],
    obj: Objective,
    grad: Option<&mut [f64]>,
) -> (f64, Vec<f64>) {
    let w = log_softmax(layout, theta);
    let Some(g) = grad else {
        return (objective_w(design, &w, obj, None), w);
    };
    let value = objective_w(design, &w, obj, Some(g));
    for (start, n) in layout.rows() {
        let row_sum: f64 = g[start..start + n].iter().sum();
        for k in start..start + n {
            g[k] -= w[k].exp() * row_sum;
        }
    }
    (value, w)
}

fn logit_gradient(data: &DiscreteDataset, structure: &Structure, obj: Objective, theta: &[f64]) -> Result<(f64, Vec<f64>), BncError> {
    structure.check_compatible(data)?;
    let layout = CptLayout::new(structure);
    if theta.len() != layout.len() {
        return Err(BncError::Shape(format!("{} logits for a {}-entry layout", theta.len(), layout.len())));
    }
    let design = Design::new(&layout, data)?;
    let mut g = vec![0.0; theta.len()];
    let (value, _) = objective_theta(&layout, &design, theta, obj, Some(&mut g));
    Ok((value, g))
}

/// Mean conditional log-likelihood of tables given as per-row softmax logits,
/// with its gradient in those logits.
pub fn mcl_gradient(data: &DiscreteDataset, structure: &Structure, theta: &[f64]) -> Result<(f64, Vec<f64>), BncError> {
    logit_gradient(data, structure, Objective::ConditionalLikelihood, theta)
}

/// Mean capped margin `min(log gamma, s_y - s_runner_up)` of tables given as
/// per-row softmax logits, with its (sub)gradient in those logits.
pub fn mm_gradient(data: &DiscreteDataset, structure: &Structure, gamma: f64, theta: &[f64]) -> Result<(f64, Vec<f64>), BncError> {
    if !(gamma > 1.0 && gamma.is_finite()) {
        return Err(BncError::Config("gamma must exceed 1".into()));
    }
    logit_gradient(data, structure, Objective::Margin { log_gamma: gamma.ln() }, theta)
}

fn ascend(data: &DiscreteDataset, structure: &Structure, obj: Objective, cfg: &OptimConfig) -> Result<Fit, BncError> {
    if !(cfg.step > 0.0 && cfg.growth >= 1.0) {
        return Err(BncError::Config("step must be positive and growth at least 1".into()));
    }
    if structure.n_classes() < 2 {
        return Err(BncError::Config("discriminative learning needs two classes".into()));
    }
    let start = learn_ml(data, structure, cfg.smoothing)?;
    let layout = start.layout().clone();
    let design = Design::new(&layout, data)?;
    let val_design = match cfg.validation {
        Some(v) => {
            structure.check_compatible(v)?;
            Some(Design::new(&layout, v)?)
        }
        None => None,
    };

    let mut theta = start.logs().to_vec();
    let mut grad = vec![0.0; theta.len()];
    let (mut f, mut w) = objective_theta(&layout, &design, &theta, obj, Some(&mut grad));
    if !f.is_finite() {
        return Err(BncError::NotFinite);
    }
    let mut step = cfg.step;
    let mut history = Vec::new();
    let mut validation_error = Vec::new();
    let mut best = val_design.as_ref().map(|d| (d.error_rate(&w), w.clone(), f));
    let mut since_best = 0;
    let mut cand = vec![0.0; theta.len()];
    let mut cand_grad = vec![0.0; theta.len()];

    'epochs: for _ in 0..cfg.epochs {
        loop {
            for ((c, t), g) in cand.iter_mut().zip(&theta).zip(&grad) {
                *c = t + step * g;
            }
            let (fc, wc) = objective_theta(&layout, &design, &cand, obj, Some(&mut cand_grad));
            if !fc.is_finite() {
                return Err(BncError::NotFinite);
            }
            if fc >= f - cfg.tolerance {
                std::mem::swap(&mut theta, &mut cand);
                std::mem::swap(&mut grad, &mut cand_grad);
                f = fc;
                w = wc;
                step *= cfg.growth;
                break;
            }
            step *= 0.5;
            if step < cfg.min_step {
                break 'epochs;
            }
        }
        history.push(f);
        if let (Some(d), Some(b)) = (&val_design, best.as_mut()) {
            let err = d.error_rate(&w);
            validation_error.push(err);
            if err < b.0 {
                *b = (err, w.clone(), f);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
    }
    let (w, objective) = match best {
        Some((_, bw, bf)) => (bw, bf),
        None => (w, f),
    };
    Ok(Fit {
        cpts: CptSet::from_logs(layout, w)?,
        objective,
        history,
        validation_error,
    })
}

/// Maximum conditional likelihood: ascends the mean of `log p(c | x)`.
pub fn learn_mcl(data: &DiscreteDataset, structure: &Structure, cfg: &OptimConfig) -> Result<Fit, BncError> {
    ascend(data, structure, Objective::ConditionalLikelihood, cfg)
}

/// Maximum margin: ascends the mean of
/// `min(log gamma, log p(c|x) - max_{c' != c} log p(c'|x))`.
pub fn learn_mm(data: &DiscreteDataset, structure: &Structure, gamma: f64, cfg: &OptimConfig) -> Result<Fit, BncError> {
    if !(gamma > 1.0 && gamma.is_finite()) {
        return Err(BncError::Config("margin cap must exceed 1".into()));
    }
    ascend(data, structure, Objective::Margin { log_gamma: gamma.ln() }, cfg)
}

/// Blend of smoothed log-likelihood (weight `lambda`) and the margin objective.
pub fn learn_hybrid(
    data: &DiscreteDataset,
    structure: &Structure,
    lambda: f64,
    gamma: f64,
    cfg: &OptimConfig,
) -> Result<Fit, BncError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(BncError::Config("lambda must lie in [0, 1]".into()));
    }
    if !(gamma > 1.0 && gamma.is_finite()) {
        return Err(BncError::Config("margin cap must exceed 1".into()));
    }
    let obj = Objective::Hybrid {
        lambda,
        log_gamma: gamma.ln(),
        eps: cfg.smoothing,
    };
    ascend(data, structure, obj, cfg)
}

/// Runs [`learn_mm`] for every cap in `gammas` and keeps the fit with the
/// lowest final validation error (the training error without a validation
/// set). Earlier caps win ties.
pub fn tune_mm(
    data: &DiscreteDataset,
    structure: &Structure,
    gammas: &[f64],
    cfg: &OptimConfig,
) -> Result<(f64, Fit), BncError> {
    let judge = cfg.validation.unwrap_or(data);
    let mut best: Option<(f64, f64, Fit)> = None;
    for &g in gammas {
        let fit = learn_mm(data, structure, g, cfg)?;
        let err = Design::new(fit.cpts.layout(), judge)?.error_rate(fit.cpts.logs());
        if best.as_ref().is_none_or(|b| err < b.0) {
            best = Some((err, g, fit));
        }
    }
    best.map(|(_, g, f)| (g, f)).ok_or_else(|| BncError::Config("empty gamma grid".into()))
}

/// Discriminative frequency estimates.
///
/// Counts start at `eps`. Each epoch adds `1 - p(c|x)` under the current
/// tables to every entry active for the true class, then renormalizes.
pub fn learn_dfe(data: &DiscreteDataset, structure: &Structure, epochs: usize, eps: f64) -> Result<CptSet, BncError> {
    Ok(dfe_counts(data, structure, epochs, eps)?.1)
}

pub(crate) fn dfe_counts(
    data: &DiscreteDataset,
    structure: &Structure,
    epochs: usize,
    eps: f64,
) -> Result<(Vec<f64>, CptSet), BncError> {
    if epochs == 0 {
        return Err(BncError::Config("at least one epoch".into()));
    }
    if data.is_empty() {
        return Err(BncError::EmptyDataset);
    }
    structure.check_compatible(data)?;
    let layout = CptLayout::new(structure);
    let design = Design::new(&layout, data)?;
    let mut counts = vec![eps; layout.len()];
    let mut cpts = normalize_counts(layout.clone(), &counts, 0.0);
    let mut s = vec![0.0; layout.n_classes()];
    for _ in 0..epochs {
        for n in 0..design.len() {
            design.scores(cpts.logs(), n, &mut s);
            let y = design.labels[n];
            let loss = 1.0 - (s[y] - log_sum_exp(&s)).exp();
            if loss > 0.0 {
                design.scatter(&mut counts, n, y, loss);
            }
        }
        cpts = normalize_counts(layout.clone(), &counts, 0.0);
    }
    Ok((counts, cpts))
}

/// Mean objective value of given tables on a dataset.
pub fn conditional_log_likelihood(cpts: &CptSet, data: &DiscreteDataset) -> Result<f64, BncError> {
    let design = Design::new(cpts.layout(), data)?;
    Ok(objective_w(&design, cpts.logs(), Objective::ConditionalLikelihood, None))
}

/// Mean capped margin of given tables on a dataset.
pub fn margin_objective(cpts: &CptSet, data: &DiscreteDataset, gamma: f64) -> Result<f64, BncError> {
    let design = Design::new(cpts.layout(), data)?;
    Ok(objective_w(&design, cpts.logs(), Objective::Margin { log_gamma: gamma.ln() }, None))
}
