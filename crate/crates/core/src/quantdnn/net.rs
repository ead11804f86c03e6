use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitkernels::{quantize_binary_scaled, quantize_scalar, quantize_ternary, Granularity, QuantKind, QuantSpec};
use crate::bitkernels::TERNARY_THRESHOLD_FACTOR;

use super::{Activation, DnnError, LayerSpec};

/// Variance offset inside batch normalization.
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl BatchNorm {
    pub fn identity(n: usize) -> Self {
        BatchNorm {
            mean: vec![0.0; n],
            var: vec![1.0; n],
            gain: vec![1.0; n],
            bias: vec![0.0; n],
        }
    }
}

/// Integer weight codes with a positive real scale per output unit.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantWeights {
    /// `out × in`, integer valued (real valued for a relaxed network).
    pub codes: Array2<f64>,
    pub row_scale: Vec<f64>,
}

impl QuantWeights {
    pub fn real(&self) -> Array2<f64> {
        let mut w = self.codes.clone();
        for (mut row, &s) in w.rows_mut().into_iter().zip(&self.row_scale) {
            row *= s;
        }
        w
    }
}

pub(crate) fn quantize_weights(w: ArrayView2<f64>, spec: &QuantSpec) -> Result<QuantWeights, DnnError> {
    let rows = w.nrows();
    match spec.kind {
        QuantKind::FixedPoint { step, .. } => {
            let mut rng = spec.rng();
            let mut codes = Array2::zeros(w.dim());
            for (c, &x) in codes.iter_mut().zip(w.iter()) {
                *c = quantize_scalar(x, spec, &mut rng)?.code as f64;
            }
            Ok(QuantWeights {
                codes,
                row_scale: vec![step; rows],
            })
        }
        QuantKind::BinaryScaled => {
            let q = quantize_binary_scaled(w, Granularity::PerRow)?;
            let signs = q.signs.unpack();
            Ok(QuantWeights {
                codes: Array2::from_shape_fn(w.dim(), |(r, c)| f64::from(signs[r * w.ncols() + c])),
                row_scale: (0..rows).map(|r| q.alpha_for_row(r)).collect(),
            })
        }
        QuantKind::TernarySymmetric => {
            let q = quantize_ternary(w, TERNARY_THRESHOLD_FACTOR)?;
            Ok(QuantWeights {
                codes: q.values.mapv(f64::from),
                row_scale: vec![q.scale; rows],
            })
        }
        _ => Err(DnnError::Spec("weights must be fixed-point, scaled binary or ternary".into())),
    }
}

/// Sign-layer thresholds in accumulator units.
///
/// Unit `r` outputs `+1` when `s * acc >= thresholds[r]`, with `s = -1` for
/// negated units and `acc` the integer dot product of weight and input codes.
#[derive(Clone, Debug, PartialEq)]
pub struct Folded {
    pub negate: Vec<bool>,
    pub thresholds: Vec<i64>,
    /// `mean - bias * sqrt(var + eps) / gain` in pre-activation units.
    pub real_thresholds: Vec<f64>,
}

/// Output of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub logits: Array2<f64>,
    /// Real pre-activations `A` of every layer.
    pub pre_activations: Vec<Array2<f64>>,
    /// `{-1, +1}` outputs of every sign layer.
    pub hidden: Vec<Array2<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantMLP {
    layers: Vec<LayerSpec>,
    input_spec: QuantSpec,
    pub(crate) weights: Vec<Array2<f64>>,
    pub(crate) bn: Vec<Option<BatchNorm>>,
    /// Positive response scale of sign layers without batch normalization.
    pub(crate) pre_scale: Vec<f64>,
    /// Log of the logit temperature used by the training loss.
    pub(crate) log_tau: f64,
    pub(crate) folded: Option<Vec<Option<Folded>>>,
}

fn validate(layers: &[LayerSpec], input_spec: &QuantSpec) -> Result<(), DnnError> {
    if layers.is_empty() {
        return Err(DnnError::Empty);
    }
    if !matches!(input_spec.kind, QuantKind::FixedPoint { .. }) {
        return Err(DnnError::Spec("inputs must use a fixed-point grid".into()));
    }
    input_spec.validate()?;
    for (l, s) in layers.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(DnnError::Spec(format!("layer {l} has a zero dimension")));
        }
        if l > 0 && layers[l - 1].out_dim != s.in_dim {
            return Err(DnnError::Spec(format!("layer {l} expects {} inputs, previous gives {}", s.in_dim, layers[l - 1].out_dim)));
        }
        if s.activation == Activation::LinearCount && l + 1 != layers.len() {
            return Err(DnnError::Spec("only the last layer may produce counts".into()));
        }
        if s.activation == Activation::LinearCount && s.use_batchnorm {
            return Err(DnnError::Spec("count layers take no batch normalization".into()));
        }
        match s.weight_spec.kind {
            QuantKind::FixedPoint { .. } | QuantKind::BinaryScaled | QuantKind::TernarySymmetric => {
                s.weight_spec.validate()?
            }
            _ => return Err(DnnError::Spec("weights must be fixed-point, scaled binary or ternary".into())),
        }
    }
    Ok(())
}

impl QuantMLP {
    /// Shadow weights drawn uniformly from `[-init_scale, init_scale]`.
    pub fn random(layers: Vec<LayerSpec>, input_spec: QuantSpec, init_scale: f64, seed: u64) -> Result<Self, DnnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = init_scale.clamp(0.0, 1.0);
        let weights = layers
            .iter()
            .map(|s| Array2::from_shape_fn((s.out_dim, s.in_dim), |_| if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 }))
            .collect();
        QuantMLP::from_weights(layers, input_spec, weights)
    }

    pub fn from_weights(layers: Vec<LayerSpec>, input_spec: QuantSpec, weights: Vec<Array2<f64>>) -> Result<Self, DnnError> {
        validate(&layers, &input_spec)?;
        if weights.len() != layers.len() {
            return Err(DnnError::Shape(format!("{} weight matrices for {} layers", weights.len(), layers.len())));
        }
        for (l, (w, s)) in weights.iter().zip(&layers).enumerate() {
            if w.dim() != (s.out_dim, s.in_dim) {
                return Err(DnnError::Shape(format!("layer {l} weights are {:?}", w.dim())));
            }
        }
        let bn = layers.iter().map(|s| s.use_batchnorm.then(|| BatchNorm::identity(s.out_dim))).collect();
        let pre_scale = layers.iter().map(|s| 1.0 / (s.in_dim as f64).sqrt()).collect();
        let last = layers.last().expect("nonempty").in_dim;
        Ok(QuantMLP {
            layers,
            input_spec,
            weights: weights.into_iter().map(|w| w.mapv(|v| v.clamp(-1.0, 1.0))).collect(),
            bn,
            pre_scale,
            log_tau: -0.5 * (last as f64).ln(),
            folded: None,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_spec(&self) -> &QuantSpec {
        &self.input_spec
    }

    pub fn shadow_weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn batchnorm(&self, layer: usize) -> Option<&BatchNorm> {
        self.bn[layer].as_ref()
    }

    pub fn batchnorm_mut(&mut self, layer: usize) -> Option<&mut BatchNorm> {
        self.folded = None;
        self.bn[layer].as_mut()
    }

    pub fn set_pre_scale(&mut self, layer: usize, scale: f64) -> Result<(), DnnError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(DnnError::Spec("response scale must be positive".into()));
        }
        self.pre_scale[layer] = scale;
        self.folded = None;
        Ok(())
    }

    pub fn pre_scale(&self, layer: usize) -> f64 {
        self.pre_scale[layer]
    }

    pub fn logit_scale(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn folded(&self) -> Option<&[Option<Folded>]> {
        self.folded.as_deref()
    }

    pub fn is_folded(&self) -> bool {
        self.folded.is_some()
    }

    /// Storage of all quantized weights in bits.
    pub fn weight_bits(&self) -> usize {
        self.layers.iter().map(|s| s.in_dim * s.out_dim * s.weight_bits() as usize).sum()
    }

    /// Bytes of a float32 export: every weight, four batch-norm values per
    /// normalized unit and the logit scale.
    pub fn float32_bytes(&self) -> usize {
        let weights: usize = self.layers.iter().map(|s| s.in_dim * s.out_dim).sum();
        let bn: usize = self.bn.iter().flatten().map(|b| 4 * b.mean.len()).sum();
        4 * (weights + bn + 1)
    }

    pub fn quantized(&self) -> Result<Vec<QuantWeights>, DnnError> {
        self.weights
            .iter()
            .zip(&self.layers)
            .map(|(w, s)| quantize_weights(w.view(), &s.weight_spec))
            .collect()
    }

    pub(crate) fn relaxed_weights(&self) -> Vec<QuantWeights> {
        self.weights
            .iter()
            .map(|w| QuantWeights {
                codes: w.clone(),
                row_scale: vec![1.0; w.nrows()],
            })
            .collect()
    }

    pub(crate) fn input_step(&self) -> f64 {
        match self.input_spec.kind {
            QuantKind::FixedPoint { step, .. } => step,
            _ => unreachable!("validated"),
        }
    }

    /// Largest magnitude of an input code.
    pub(crate) fn input_code_bound(&self) -> i64 {
        match self.input_spec.kind {
            QuantKind::FixedPoint { bits: 1, .. } => 1,
            QuantKind::FixedPoint { bits, .. } => 1i64 << (bits - 1),
            _ => unreachable!("validated"),
        }
    }

    /// Input codes `round(x / step)` on the input grid.
    pub fn input_codes(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, DnnError> {
        let d = self.layers[0].in_dim;
        if x.ncols() != d {
            return Err(DnnError::Shape(format!("inputs have {} columns, expected {d}", x.ncols())));
        }
        let mut rng = self.input_spec.rng();
        let mut out = Array2::zeros(x.dim());
        for (o, &v) in out.iter_mut().zip(x.iter()) {
            *o = quantize_scalar(v, &self.input_spec, &mut rng)?.code as f64;
        }
        Ok(out)
    }

    /// Real pre-activation per accumulator unit: `row_scale * input step`.
    pub(crate) fn unit_scales(&self, layer: usize, q: &QuantWeights) -> Vec<f64> {
        let in_scale = if layer == 0 { self.input_step() } else { 1.0 };
        q.row_scale.iter().map(|s| s * in_scale).collect()
    }

    /// Response of sign unit `r` to accumulator value `acc`; the unit fires
    /// when this is at least zero.
    #[inline]
    pub(crate) fn response(&self, layer: usize, r: usize, acc: f64, unit_scale: f64) -> f64 {
        let a = acc * unit_scale;
        match &self.bn[layer] {
            Some(bn) => (a - bn.mean[r]) / (bn.var[r] + BN_EPS).sqrt() * bn.gain[r] + bn.bias[r],
            None => a * self.pre_scale[layer],
        }
    }

    /// Forward pass in real arithmetic with population statistics.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Forward, DnnError> {
        let codes = self.input_codes(x)?;
        let q = self.quantized()?;
        Ok(self.forward_codes(&codes, &q, self.layers.len()))
    }

    /// Runs layers `0..upto` on input codes.
    pub(crate) fn forward_codes(&self, codes: &Array2<f64>, q: &[QuantWeights], upto: usize) -> Forward {
        let mut h = codes.clone();
        let mut pre = Vec::new();
        let mut hidden = Vec::new();
        let mut logits = Array2::zeros((codes.nrows(), 0));
        for l in 0..upto {
            let us = self.unit_scales(l, &q[l]);
            let acc = h.dot(&q[l].codes.t());
            let mut a = acc.clone();
            for mut row in a.rows_mut() {
                for (v, s) in row.iter_mut().zip(&us) {
                    *v *= s;
                }
            }
            match self.layers[l].activation {
                Activation::Sign => {
                    let mut z = acc;
                    for mut row in z.rows_mut() {
                        for (r, v) in row.iter_mut().enumerate() {
                            *v = if self.response(l, r, *v, us[r]) >= 0.0 { 1.0 } else { -1.0 };
                        }
                    }
                    hidden.push(z.clone());
                    logits = z.clone();
                    h = z;
                }
                Activation::LinearCount => logits = a.clone(),
            }
            pre.push(a);
        }
        Forward {
            logits,
            pre_activations: pre,
            hidden,
        }
    }

    /// Recomputes every batch-norm mean and variance over `codes`, one layer
    /// at a time.
    pub(crate) fn recompute_statistics(&mut self, codes: &Array2<f64>) -> Result<(), DnnError> {
        let q = self.quantized()?;
        const CHUNK: usize = 2000;
        for l in 0..self.layers.len() {
            if self.bn[l].is_none() {
                continue;
            }
            let n = self.layers[l].out_dim;
            let (mut s1, mut s2) = (vec![0.0; n], vec![0.0; n]);
            let mut start = 0;
            while start < codes.nrows() {
                let end = (start + CHUNK).min(codes.nrows());
                let f = self.forward_codes(&codes.slice(ndarray::s![start..end, ..]).to_owned(), &q, l + 1);
                let a = &f.pre_activations[l];
                for row in a.rows() {
                    for (r, &v) in row.iter().enumerate() {
                        s1[r] += v;
                        s2[r] += v * v;
                    }
                }
                start = end;
            }
            let count = codes.nrows().max(1) as f64;
            let bn = self.bn[l].as_mut().expect("checked");
            for r in 0..n {
                let m = s1[r] / count;
                bn.mean[r] = m;
                bn.var[r] = (s2[r] / count - m * m).max(0.0);
            }
        }
        self.folded = None;
        Ok(())
    }

    /// Replaces every sign layer's response by an integer threshold on the
    /// accumulator, negating units whose response decreases.
    pub fn fold_batchnorm(&self) -> Result<QuantMLP, DnnError> {
        let q = self.quantized()?;
        let mut folded = Vec::with_capacity(self.layers.len());
        for (l, spec) in self.layers.iter().enumerate() {
            if spec.activation != Activation::Sign {
                folded.push(None);
                continue;
            }
            let us = self.unit_scales(l, &q[l]);
            let in_bound = if l == 0 { self.input_code_bound() } else { 1 };
            let mut f = Folded {
                negate: vec![false; spec.out_dim],
                thresholds: vec![0; spec.out_dim],
                real_thresholds: vec![0.0; spec.out_dim],
            };
            for r in 0..spec.out_dim {
                let max_code = q[l].codes.row(r).iter().fold(0.0f64, |m, v| m.max(v.abs())) as i64;
                let bound = spec.in_dim as i64 * max_code * in_bound;
                let gain = match &self.bn[l] {
                    Some(bn) => {
                        if bn.gain[r] == 0.0 {
                            return Err(DnnError::NonInvertibleBatchnorm { layer: l, unit: r });
                        }
                        f.real_thresholds[r] = bn.mean[r] - bn.bias[r] * (bn.var[r] + BN_EPS).sqrt() / bn.gain[r];
                        bn.gain[r]
                    }
                    None => 1.0,
                };
                let fires = |acc: i64| self.response(l, r, acc as f64, us[r]) >= 0.0;
                let slope = us[r] * gain;
                if slope >= 0.0 {
                    // first accumulator value that fires; bound + 1 means never
                    let (mut lo, mut hi) = (-bound, bound + 1);
                    while lo < hi {
                        let mid = lo + (hi - lo) / 2;
                        if fires(mid) {
                            hi = mid;
                        } else {
                            lo = mid + 1;
                        }
                    }
                    f.thresholds[r] = lo;
                } else {
                    // last value that fires; -bound - 1 means never
                    let (mut lo, mut hi) = (-bound - 1, bound);
                    while lo < hi {
                        let mid = hi - (hi - lo) / 2;
                        if fires(mid) {
                            lo = mid;
                        } else {
                            hi = mid - 1;
                        }
                    }
                    f.negate[r] = true;
                    f.thresholds[r] = -lo;
                }
            }
            folded.push(Some(f));
        }
        let mut out = self.clone();
        out.folded = Some(folded);
        Ok(out)
    }
}

/// Options for one training pass.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PassOptions {
    /// Identity weight quantizer and hard-tanh activations.
    pub relaxed: bool,
    pub dropout: f64,
}

/// Loss gradients; batch-norm entries are empty for layers without it.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w: Vec<Array2<f64>>,
    pub gain: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
    pub log_tau: f64,
}

pub(crate) struct PassResult {
    pub loss: f64,
    pub grads: Gradients,
}

struct SignCache {
    y: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
    mask: Option<Array2<f64>>,
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
    p
}

pub(crate) fn argmax_row(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best
}

impl QuantMLP {
    /// Mean softmax cross-entropy of `tau * logits` on a batch with batch
    /// statistics, and its straight-through gradient.
    pub(crate) fn train_pass(
        &self,
        codes: &Array2<f64>,
        labels: &[usize],
        opts: PassOptions,
        rng: &mut ChaCha8Rng,
    ) -> Result<PassResult, DnnError> {
        let nl = self.layers.len();
        if self.layers[nl - 1].activation != Activation::LinearCount {
            return Err(DnnError::Spec("training needs a count output layer".into()));
        }
        if labels.len() != codes.nrows() || labels.iter().any(|&y| y >= self.layers[nl - 1].out_dim) {
            return Err(DnnError::Shape("labels do not match the batch or the outputs".into()));
        }
        let q = if opts.relaxed { self.relaxed_weights() } else { self.quantized()? };
        let b = codes.nrows();
        let bf = b as f64;
        let mut inputs = vec![codes.clone()];
        let mut caches: Vec<Option<SignCache>> = Vec::with_capacity(nl);
        let mut scales = Vec::with_capacity(nl);
        let mut out = Array2::zeros((b, 0));
        for l in 0..nl {
            let us = self.unit_scales(l, &q[l]);
            let mut a = inputs[l].dot(&q[l].codes.t());
            for mut row in a.rows_mut() {
                for (v, s) in row.iter_mut().zip(&us) {
                    *v *= s;
                }
            }
            scales.push(us);
            if l + 1 == nl {
                out = a;
                caches.push(None);
                break;
            }
            let n = self.layers[l].out_dim;
            let (y, xhat, inv_std) = match &self.bn[l] {
                Some(bn) => {
                    let mean = a.mean_axis(Axis(0)).expect("nonempty batch");
                    let var = a.var_axis(Axis(0), 0.0);
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                    let mut xhat = a.clone();
                    for mut row in xhat.rows_mut() {
                        for r in 0..n {
                            row[r] = (row[r] - mean[r]) * inv_std[r];
                        }
                    }
                    let mut y = xhat.clone();
                    for mut row in y.rows_mut() {
                        for r in 0..n {
                            row[r] = row[r] * bn.gain[r] + bn.bias[r];
                        }
                    }
                    (y, xhat, inv_std)
                }
                None => (a.mapv(|v| v * self.pre_scale[l]), Array2::zeros((0, 0)), Vec::new()),
            };
            let mut z = if opts.relaxed {
                y.mapv(|v| v.clamp(-1.0, 1.0))
            } else {
                y.mapv(|v| if v >= 0.0 { 1.0 } else { -1.0 })
            };
            let mask = (opts.dropout > 0.0).then(|| {
                let keep = 1.0 - opts.dropout;
                Array2::from_shape_fn(z.dim(), |_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            });
            if let Some(m) = &mask {
                z *= m;
            }
            inputs.push(z);
            caches.push(Some(SignCache { y, xhat, inv_std, mask }));
        }

        let tau = self.log_tau.exp();
        let p = softmax_rows(&out.mapv(|v| v * tau));
        let mut loss = 0.0;
        let mut g = p.clone();
        for (i, &y) in labels.iter().enumerate() {
            loss -= p[[i, y]].max(1e-300).ln();
            g[[i, y]] -= 1.0;
        }
        loss /= bf;
        g /= bf;
        let log_tau_grad = (&g * &out).sum() * tau;
        let mut da = g * tau;

        let mut gw = vec![Array2::zeros((0, 0)); nl];
        let mut ggain = vec![Vec::new(); nl];
        let mut gbias = vec![Vec::new(); nl];
        for l in (0..nl).rev() {
            let in_scale = if l == 0 { self.input_step() } else { 1.0 };
            // a = in_scale * sum_i h_i * (code * row_scale); the quantizer is passed through
            gw[l] = da.t().dot(&inputs[l]) * in_scale;
            if l == 0 {
                break;
            }
            let mut scaled = da.clone();
            for mut row in scaled.rows_mut() {
                for (v, s) in row.iter_mut().zip(&scales[l]) {
                    *v *= s;
                }
            }
            let mut dh = scaled.dot(&q[l].codes);
            let c = caches[l - 1].as_ref().expect("hidden layer cache");
            if let Some(m) = &c.mask {
                dh *= m;
            }
            // straight-through window of the sign (exact derivative of hard-tanh)
            ndarray::Zip::from(&mut dh).and(&c.y).for_each(|d, &y| {
                if y.abs() > 1.0 {
                    *d = 0.0;
                }
            });
            let n = self.layers[l - 1].out_dim;
            da = match &self.bn[l - 1] {
                Some(bn) => {
                    let mut dg = vec![0.0; n];
                    let mut db = vec![0.0; n];
                    let mut sum_dx = vec![0.0; n];
                    let mut sum_dx_x = vec![0.0; n];
                    for (drow, xrow) in dh.rows().into_iter().zip(c.xhat.rows()) {
                        for r in 0..n {
                            dg[r] += drow[r] * xrow[r];
                            db[r] += drow[r];
                            let dx = drow[r] * bn.gain[r];
                            sum_dx[r] += dx;
                            sum_dx_x[r] += dx * xrow[r];
                        }
                    }
                    let mut out = dh.clone();
                    for (mut orow, xrow) in out.rows_mut().into_iter().zip(c.xhat.rows()) {
                        for r in 0..n {
                            let dx = orow[r] * bn.gain[r];
                            orow[r] = c.inv_std[r] / bf * (bf * dx - sum_dx[r] - xrow[r] * sum_dx_x[r]);
                        }
                    }
                    ggain[l - 1] = dg;
                    gbias[l - 1] = db;
                    out
                }
                None => dh * self.pre_scale[l - 1],
            };
        }
        Ok(PassResult {
            loss,
            grads: Gradients {
                w: gw,
                gain: ggain,
                bias: gbias,
                log_tau: log_tau_grad,
            },
        })
    }
}

impl QuantMLP {
    /// Mean loss and exact gradients of the relaxed network: shadow weights
    /// used unquantized, hard-tanh in place of sign, batch statistics and no
    /// dropout.
    pub fn relaxed_gradient(&self, x: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Gradients), DnnError> {
        let codes = self.input_codes(x)?;
        let opts = PassOptions {
            relaxed: true,
            dropout: 0.0,
        };
        let r = self.train_pass(&codes, labels, opts, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok((r.loss, r.grads))
    }

    /// Mutable shadow weights; values are used as given, without clipping.
    pub fn shadow_weights_mut(&mut self) -> &mut [Array2<f64>] {
        self.folded = None;
        &mut self.weights
    }
}

/// Data-dependent response scale for sign layers without batch
/// normalization: one over the standard deviation of the pre-activations on
/// `codes`.
pub(crate) fn calibrate_pre_scales(net: &mut QuantMLP, codes: &Array2<f64>) -> Result<(), DnnError> {
    let q = net.quantized()?;
    for l in 0..net.layers.len() {
        if net.layers[l].activation != Activation::Sign || net.bn[l].is_some() {
            continue;
        }
        let f = net.forward_codes(codes, &q, l + 1);
        let a = &f.pre_activations[l];
        let sd = a.std(0.0);
        if sd > 0.0 && sd.is_finite() {
            net.pre_scale[l] = 1.0 / sd;
        }
    }
    net.folded = None;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantdnn::{sign_inputs, unit_interval_inputs, weight_grid};
    use ndarray::array;

    fn random_net(seed: u64, bn: bool) -> QuantMLP {
        let layers = vec![
            LayerSpec::sign(12, 9, 3, bn),
            LayerSpec::sign(9, 7, 1, bn),
            LayerSpec::count(7, 4, 1),
        ];
        let mut net = QuantMLP::random(layers, unit_interval_inputs(8), 1.0, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for l in 0..2 {
            if let Some(b) = net.batchnorm_mut(l) {
                for r in 0..b.mean.len() {
                    b.mean[r] = rng.gen_range(-1.0..1.0);
                    b.var[r] = rng.gen_range(0.1..2.0);
                    b.gain[r] = rng.gen_range(-2.0..2.0);
                    b.bias[r] = rng.gen_range(-1.0..1.0);
                }
            }
        }
        net
    }

    #[test]
    fn sign_of_zero_is_positive() {
        let layers = vec![LayerSpec::sign(2, 1, 1, false)];
        let net = QuantMLP::from_weights(layers, sign_inputs(), vec![array![[1.0, -1.0]]]).unwrap();
        let f = net.forward(array![[1.0, 1.0]].view()).unwrap();
        assert_eq!(f.pre_activations[0][[0, 0]], 0.0);
        assert_eq!(f.hidden[0][[0, 0]], 1.0);
    }

    #[test]
    fn count_logits_are_bounded() {
        let layers = vec![LayerSpec::sign(5, 6, 1, false), LayerSpec::count(6, 3, 1)];
        let net = QuantMLP::random(layers, sign_inputs(), 1.0, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((50, 5), |_| if rng.gen() { 1.0 } else { -1.0 });
        let f = net.forward(x.view()).unwrap();
        assert!(f.logits.iter().all(|v| v.abs() <= 6.0 && v.fract() == 0.0));
    }

    #[test]
    fn rejects_bad_architectures() {
        assert!(matches!(QuantMLP::random(vec![], sign_inputs(), 1.0, 0), Err(DnnError::Empty)));
        let mid_count = vec![LayerSpec::count(3, 3, 1), LayerSpec::sign(3, 2, 1, false)];
        assert!(QuantMLP::random(mid_count, sign_inputs(), 1.0, 0).is_err());
        let mismatch = vec![LayerSpec::sign(3, 4, 1, false), LayerSpec::count(5, 2, 1)];
        assert!(QuantMLP::random(mismatch, sign_inputs(), 1.0, 0).is_err());
        let float_w = LayerSpec::new(3, 2, QuantSpec::reduced_float(3, 3), Activation::LinearCount, false);
        assert!(QuantMLP::random(vec![float_w], sign_inputs(), 1.0, 0).is_err());
        let zero = vec![LayerSpec::count(0, 2, 1)];
        assert!(QuantMLP::random(zero, sign_inputs(), 1.0, 0).is_err());
    }

    #[test]
    fn identity_fold_has_zero_threshold() {
        let layers = vec![LayerSpec::sign(4, 3, 1, true)];
        let net = QuantMLP::random(layers, sign_inputs(), 1.0, 1).unwrap();
        let f = net.fold_batchnorm().unwrap();
        let folded = f.folded().unwrap()[0].as_ref().unwrap();
        assert!(folded.real_thresholds.iter().all(|&t| t == 0.0));
        assert!(folded.thresholds.iter().all(|&t| t == 0));
        assert!(folded.negate.iter().all(|&n| !n));
    }

    #[test]
    fn zero_gain_is_rejected() {
        let mut net = random_net(2, true);
        net.batchnorm_mut(1).unwrap().gain[3] = 0.0;
        assert!(matches!(net.fold_batchnorm(), Err(DnnError::NonInvertibleBatchnorm { layer: 1, unit: 3 })));
    }

    #[test]
    fn folded_thresholds_reproduce_responses() {
        for seed in 0..20 {
            let net = random_net(seed, seed % 2 == 0);
            let folded = net.fold_batchnorm().unwrap();
            let q = net.quantized().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (l, f) in folded.folded().unwrap().iter().enumerate() {
                let Some(f) = f else { continue };
                let us = net.unit_scales(l, &q[l]);
                let in_bound = if l == 0 { net.input_code_bound() } else { 1 };
                for r in 0..f.thresholds.len() {
                    let max_code = q[l].codes.row(r).iter().fold(0.0f64, |m, v| m.max(v.abs())) as i64;
                    let bound = q[l].codes.ncols() as i64 * max_code * in_bound;
                    for _ in 0..200 {
                        let acc: i64 = rng.gen_range(-bound..=bound);
                        let fires = net.response(l, r, acc as f64, us[r]) >= 0.0;
                        let s = if f.negate[r] { -acc } else { acc };
                        assert_eq!(fires, s >= f.thresholds[r]);
                    }
                }
            }
        }
    }

    #[test]
    fn negative_gain_flips_the_unit() {
        let layers = vec![LayerSpec::sign(3, 1, 1, true)];
        let mut net = QuantMLP::from_weights(layers, sign_inputs(), vec![array![[1.0, 1.0, 1.0]]]).unwrap();
        let bn = net.batchnorm_mut(0).unwrap();
        bn.gain[0] = -1.0;
        bn.bias[0] = 0.5;
        let f = net.fold_batchnorm().unwrap();
        let folded = f.folded().unwrap()[0].as_ref().unwrap();
        assert!(folded.negate[0]);
        // fires iff -a * 1/sqrt(1+eps) + 0.5 >= 0, i.e. acc <= 0 for odd sums
        for (x, z) in [([1.0, 1.0, 1.0], -1.0), ([-1.0, -1.0, 1.0], 1.0), ([1.0, -1.0, -1.0], 1.0)] {
            let out = net.forward(ndarray::arr2(&[x]).view()).unwrap();
            assert_eq!(out.hidden[0][[0, 0]], z);
        }
    }

    fn relaxed_loss(net: &QuantMLP, codes: &Array2<f64>, labels: &[usize]) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let opts = PassOptions {
            relaxed: true,
            dropout: 0.0,
        };
        net.train_pass(codes, labels, opts, &mut rng).unwrap().loss
    }

    #[test]
    fn relaxed_gradients_match_finite_differences() {
        for (seed, bn) in [(1u64, true), (2, false)] {
            let layers = vec![LayerSpec::sign(5, 4, 3, bn), LayerSpec::count(4, 3, 1)];
            let mut net = QuantMLP::random(layers, unit_interval_inputs(8), 0.8, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if let Some(b) = net.batchnorm_mut(0) {
                for r in 0..4 {
                    b.gain[r] = rng.gen_range(0.2..0.6);
                    b.bias[r] = rng.gen_range(-0.3..0.3);
                }
            }
            let x = Array2::from_shape_fn((6, 5), |_| rng.gen_range(0.0..1.0));
            let labels = [0, 1, 2, 1, 0, 2];
            let codes = net.input_codes(x.view()).unwrap();
            let opts = PassOptions {
                relaxed: true,
                dropout: 0.0,
            };
            let g = net.train_pass(&codes, &labels, opts, &mut rng).unwrap().grads;
            let h = 1e-6;
            let check = |analytic: f64, plus: f64, minus: f64, what: &str| {
                let fd = (plus - minus) / (2.0 * h);
                let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-4);
                assert!(rel <= 1e-4, "{what}: analytic {analytic} numeric {fd}");
            };
            for l in 0..2 {
                for idx in 0..net.weights[l].len() {
                    let (r, c) = (idx / net.weights[l].ncols(), idx % net.weights[l].ncols());
                    let mut p = net.clone();
                    p.weights[l][[r, c]] += h;
                    let mut m = net.clone();
                    m.weights[l][[r, c]] -= h;
                    check(g.w[l][[r, c]], relaxed_loss(&p, &codes, &labels), relaxed_loss(&m, &codes, &labels), "weight");
                }
            }
            if bn {
                for r in 0..4 {
                    let mut p = net.clone();
                    p.bn[0].as_mut().unwrap().gain[r] += h;
                    let mut m = net.clone();
                    m.bn[0].as_mut().unwrap().gain[r] -= h;
                    check(g.gain[0][r], relaxed_loss(&p, &codes, &labels), relaxed_loss(&m, &codes, &labels), "gain");
                    let mut p = net.clone();
                    p.bn[0].as_mut().unwrap().bias[r] += h;
                    let mut m = net.clone();
                    m.bn[0].as_mut().unwrap().bias[r] -= h;
                    check(g.bias[0][r], relaxed_loss(&p, &codes, &labels), relaxed_loss(&m, &codes, &labels), "bias");
                }
            }
            let mut p = net.clone();
            p.log_tau += h;
            let mut m = net.clone();
            m.log_tau -= h;
            check(g.log_tau, relaxed_loss(&p, &codes, &labels), relaxed_loss(&m, &codes, &labels), "tau");
        }
    }

    #[test]
    fn saturated_units_pass_no_gradient() {
        let layers = vec![LayerSpec::sign(3, 2, 1, false), LayerSpec::count(2, 2, 1)];
        let mut net = QuantMLP::random(layers, sign_inputs(), 1.0, 5).unwrap();
        net.set_pre_scale(0, 100.0).unwrap();
        let codes = array![[1.0, 1.0, -1.0], [1.0, -1.0, 1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let opts = PassOptions {
            relaxed: false,
            dropout: 0.0,
        };
        let g = net.train_pass(&codes, &[0, 0], opts, &mut rng).unwrap().grads;
        // every |y| = 100 * |odd sum| > 1
        assert!(g.w[0].iter().all(|&v| v == 0.0));
        assert!(g.w[1].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn grid_helpers() {
        assert_eq!(weight_grid(3), QuantSpec::fixed_point(3, 1.0 / 3.0));
        assert_eq!(weight_grid(1), QuantSpec::fixed_point(1, 1.0));
    }
}
