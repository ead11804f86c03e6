use std::io::Write;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bitkernels::QuantSpec;
use crate::data::DenseDataset;

use super::bundle::PackedMLP;
use super::net::{calibrate_pre_scales, PassOptions, QuantMLP};
use super::{DnnError, LayerSpec};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { momentum: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    pub optimizer: Optimizer,
    /// Drop probability on hidden sign outputs.
    pub dropout: f64,
    pub init_scale: f64,
    pub seed: u64,
    /// Stop once training error reaches zero.
    pub stop_at_zero_error: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 100,
            learning_rate: 0.003,
            lr_decay: 0.97,
            optimizer: Optimizer::adam(),
            dropout: 0.25,
            init_scale: 1.0,
            seed: 0,
            stop_at_zero_error: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), DnnError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(DnnError::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0) {
            return Err(DnnError::Config("learning rate and decay must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(DnnError::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Error of the folded network on the training set.
    pub train_err: f64,
    pub valid_err: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Folded network of the selected epoch.
    pub net: QuantMLP,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub valid_error: Option<f64>,
}

impl TrainReport {
    pub fn packed(&self) -> Result<PackedMLP, DnnError> {
        PackedMLP::from_folded(&self.net)
    }
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut f64>, grads: impl Iterator<Item = f64>, opt: Optimizer, lr: f64, t: i32) {
        for (((p, g), m), v) in params.zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            match opt {
                Optimizer::Adam { beta1, beta2, eps } => {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let mh = *m / (1.0 - beta1.powi(t));
                    let vh = *v / (1.0 - beta2.powi(t));
                    *p -= lr * mh / (vh.sqrt() + eps);
                }
                Optimizer::SgdMomentum { momentum } => {
                    *m = momentum * *m + g;
                    *p -= lr * *m;
                }
            }
        }
    }
}

/// Straight-through training of a quantized network.
///
/// After every epoch the batch-norm statistics are recomputed over the
/// training set, the network is folded and both errors are measured on the
/// packed network. The epoch with the lowest validation error (training
/// error without validation data) is returned.
pub fn train_ste(
    layers: Vec<LayerSpec>,
    input_spec: QuantSpec,
    train: &DenseDataset,
    valid: Option<&DenseDataset>,
    cfg: &TrainConfig,
) -> Result<TrainReport, DnnError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(DnnError::Config("empty training set".into()));
    }
    let out_dim = layers.last().map(|l| l.out_dim).ok_or(DnnError::Empty)?;
    if out_dim != train.n_classes {
        return Err(DnnError::Shape(format!("{out_dim} outputs for {} classes", train.n_classes)));
    }
    let mut net = QuantMLP::random(layers, input_spec, cfg.init_scale, cfg.seed)?;
    let codes = net.input_codes(train.inputs.view())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let probe = codes.select(Axis(0), &order[..order.len().min(1000)]);
    calibrate_pre_scales(&mut net, &probe)?;

    let nl = net.layers().len();
    let mut w_mom: Vec<Moments> = net.weights.iter().map(|w| Moments::new(w.len())).collect();
    let mut bn_mom: Vec<Option<(Moments, Moments)>> =
        net.bn.iter().map(|b| b.as_ref().map(|b| (Moments::new(b.gain.len()), Moments::new(b.gain.len())))).collect();
    let mut tau_mom = Moments::new(1);
    let opts = PassOptions {
        relaxed: false,
        dropout: cfg.dropout,
    };

    let mut lr = cfg.learning_rate;
    let mut t = 0;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, QuantMLP)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb: Array2<f64> = codes.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let pass = net.train_pass(&xb, &yb, opts, &mut rng)?;
            if !pass.loss.is_finite() {
                return Err(DnnError::Diverged { epoch, loss: pass.loss });
            }
            loss_sum += pass.loss * chunk.len() as f64;
            t += 1;
            let g = pass.grads;
            for l in 0..nl {
                w_mom[l].step(net.weights[l].iter_mut(), g.w[l].iter().copied(), cfg.optimizer, lr, t);
                net.weights[l].mapv_inplace(|v| v.clamp(-1.0, 1.0));
                if let (Some(bn), Some((mg, mb))) = (net.bn[l].as_mut(), bn_mom[l].as_mut()) {
                    mg.step(bn.gain.iter_mut(), g.gain[l].iter().copied(), cfg.optimizer, lr, t);
                    mb.step(bn.bias.iter_mut(), g.bias[l].iter().copied(), cfg.optimizer, lr, t);
                }
            }
            tau_mom.step(std::iter::once(&mut net.log_tau), std::iter::once(g.log_tau), cfg.optimizer, lr, t);
        }
        lr *= cfg.lr_decay;
        net.folded = None;
        net.recompute_statistics(&codes)?;
        let folded = net.fold_batchnorm()?;
        let packed = PackedMLP::from_folded(&folded)?;
        let train_err = packed.error_rate(train)?;
        let valid_err = valid.map(|v| packed.error_rate(v)).transpose()?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_err,
            valid_err,
        };
        log.push(entry);
        let score = valid_err.unwrap_or(train_err);
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, epoch, folded));
        }
        if cfg.stop_at_zero_error && train_err == 0.0 {
            break;
        }
    }
    let (_, best_epoch, net) = best.expect("at least one epoch");
    let valid_error = log[best_epoch - 1].valid_err;
    Ok(TrainReport {
        net,
        log,
        best_epoch,
        valid_error,
    })
}

/// Writes `epoch,train_loss,train_err,valid_err` rows.
pub fn write_log<W: Write>(log: &[EpochLog], w: W) -> Result<(), DnnError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "train_loss", "train_err", "valid_err"])?;
    for e in log {
        out.write_record([
            e.epoch.to_string(),
            format!("{:.6}", e.train_loss),
            format!("{:.6}", e.train_err),
            e.valid_err.map(|v| format!("{v:.6}")).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantdnn::sign_inputs;
    use ndarray::array;

    fn xor() -> DenseDataset {
        let x = array![[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]];
        DenseDataset::new(x, vec![0, 1, 1, 0], 2).unwrap()
    }

    fn xor_config(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 500,
            batch_size: 4,
            learning_rate: 0.05,
            lr_decay: 1.0,
            dropout: 0.0,
            seed,
            stop_at_zero_error: true,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn learns_xor() {
        let layers = vec![LayerSpec::sign(2, 4, 1, true), LayerSpec::count(4, 2, 1)];
        let report = train_ste(layers, sign_inputs(), &xor(), None, &xor_config(7)).unwrap();
        assert!(report.log.len() <= 500);
        assert_eq!(report.packed().unwrap().error_rate(&xor()).unwrap(), 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let layers = vec![LayerSpec::sign(2, 4, 1, true), LayerSpec::count(4, 2, 1)];
        let cfg = TrainConfig {
            epochs: 20,
            stop_at_zero_error: false,
            dropout: 0.25,
            ..xor_config(3)
        };
        let a = train_ste(layers.clone(), sign_inputs(), &xor(), None, &cfg).unwrap();
        let b = train_ste(layers, sign_inputs(), &xor(), None, &cfg).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn log_has_expected_columns() {
        let entries = [EpochLog {
            epoch: 1,
            train_loss: 0.5,
            train_err: 0.25,
            valid_err: None,
        }];
        let mut buf = Vec::new();
        write_log(&entries, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "epoch,train_loss,train_err,valid_err\n1,0.500000,0.250000,\n");
    }

    #[test]
    fn rejects_bad_config() {
        let layers = vec![LayerSpec::count(2, 2, 1)];
        let cfg = TrainConfig {
            dropout: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(train_ste(layers, sign_inputs(), &xor(), None, &cfg), Err(DnnError::Config(_))));
    }
}
