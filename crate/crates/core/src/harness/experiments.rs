use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitkernels::{binary_gemm, float_gemm_naive, BitMatrix};
use crate::bnc::{
    io as bnc_io, learn_dfe, learn_hybrid, learn_mcl, learn_ml, learn_mm, learn_structure_nb, learn_structure_tan,
    quantize_fixed, quantize_float, tune_mm, BayesNetClassifier, OptimConfig, Representation, Structure,
    DEFAULT_SMOOTHING, GAMMA_GRID,
};
use crate::data::{knn_impute, mar_mask, read_csv_file, DenseDataset, DiscreteDataset, Mnist};
use crate::quantdnn::{
    train_ste, unit_interval_inputs, write_log, LayerSpec, Optimizer, PackedMLP, TrainConfig, TrainReport,
};

use super::{median_ms, Config, HarnessError, LogisticRegression, Table};

/// Training images used for fitting; the remaining ones validate.
pub const MNIST_TRAIN: usize = 50_000;
/// Gray levels per pixel for Bayesian network classifiers.
pub const MNIST_LEVELS: usize = 4;
/// Discrete tables shipped under `uci/` in the data root.
pub const UCI_DATASETS: [&str; 5] = ["breast_cancer", "digits", "heart_disease", "ionosphere", "zoo"];

const BENCH_SIZES: [usize; 4] = [256, 512, 1024, 2048];

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// 14×14 MNIST, discretized, with constant training pixels removed.
#[derive(Clone, Debug)]
pub struct MnistBnc {
    pub train: DiscreteDataset,
    pub valid: DiscreteDataset,
    pub test: DiscreteDataset,
    pub kept: Vec<usize>,
}

pub fn mnist_bnc(root: &Path, levels: usize) -> Result<MnistBnc, HarnessError> {
    let m = Mnist::load(&root.join("mnist"))?.downsampled()?;
    let (all, test) = m.discrete(levels)?;
    if all.len() <= MNIST_TRAIN {
        return Err(HarnessError::Config("MNIST training set is too small".into()));
    }
    let kept = all.non_constant_features();
    let all = all.select_features(&kept);
    Ok(MnistBnc {
        train: all.subset(&(0..MNIST_TRAIN).collect::<Vec<_>>()),
        valid: all.subset(&(MNIST_TRAIN..all.len()).collect::<Vec<_>>()),
        test: test.select_features(&kept),
        kept,
    })
}

/// 14×14 MNIST with pixels in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct MnistDense {
    pub train: DenseDataset,
    pub valid: DenseDataset,
    pub test: DenseDataset,
}

pub fn mnist_dense(root: &Path) -> Result<MnistDense, HarnessError> {
    let m = Mnist::load(&root.join("mnist"))?.downsampled()?;
    let (all, test) = m.dense()?;
    if all.len() <= MNIST_TRAIN {
        return Err(HarnessError::Config("MNIST training set is too small".into()));
    }
    Ok(MnistDense {
        train: all.range(0, MNIST_TRAIN),
        valid: all.range(MNIST_TRAIN, all.len()),
        test,
    })
}

/// Times packed sign GEMM against the naive `f32` GEMM after checking that
/// both agree exactly.
pub fn bench_gemm(cfg: &Config) -> Result<Table, HarnessError> {
    let sizes = cfg.list_or("sizes", &[256usize, 512, 1024])?;
    let repeats: usize = cfg.parse_or("repeats", 5)?;
    if repeats < 5 {
        return Err(HarnessError::Config("repeats must be at least 5".into()));
    }
    if let Some(s) = sizes.iter().find(|s| !BENCH_SIZES.contains(s)) {
        return Err(HarnessError::Config(format!("size {s} is not one of {BENCH_SIZES:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed()?);
    let mut table = Table::new(&["size", "time_float32_ms", "time_binary_ms", "speedup"]);
    for &n in &sizes {
        let av: Vec<f32> = (0..n * n).map(|_| if rng.gen() { 1.0 } else { -1.0 }).collect();
        let bv: Vec<f32> = (0..n * n).map(|_| if rng.gen() { 1.0 } else { -1.0 }).collect();
        let a = BitMatrix::from_fn(n, n, |r, c| av[r * n + c] > 0.0);
        let b = BitMatrix::from_fn(n, n, |r, c| bv[r * n + c] > 0.0);
        let packed = binary_gemm(&a, &b)?;
        let float = float_gemm_naive(&av, &bv, n, n, n);
        if packed.data.iter().zip(&float).any(|(&p, &f)| p as f32 != f) {
            return Err(HarnessError::Gate(format!("binary and float products differ at size {n}")));
        }
        let tf = median_ms(repeats, || float_gemm_naive(&av, &bv, n, n, n));
        let tb = median_ms(repeats, || binary_gemm(&a, &b));
        table.push(vec![n.to_string(), format!("{tf:.3}"), format!("{tb:.3}"), format!("{:.2}", tf / tb)]);
    }
    Ok(table)
}

fn dnn_layers(cfg: &Config) -> Result<Vec<LayerSpec>, HarnessError> {
    let hidden: usize = cfg.parse_or("hidden", 193)?;
    let bits: u32 = cfg.parse_or("bits", 1)?;
    let out_bits: u32 = cfg.parse_or("out_bits", bits)?;
    let bn: bool = cfg.parse_or("batchnorm", true)?;
    if hidden == 0 || !(1..=16).contains(&bits) || !(1..=16).contains(&out_bits) {
        return Err(HarnessError::Config("hidden must be positive and bit widths in 1..=16".into()));
    }
    Ok(vec![LayerSpec::sign(196, hidden, bits, bn), LayerSpec::count(hidden, 10, out_bits)])
}

fn train_config(cfg: &Config) -> Result<TrainConfig, HarnessError> {
    let d = TrainConfig::default();
    let optimizer = match cfg.get("optimizer").unwrap_or("adam") {
        "adam" | "adam_like" => Optimizer::adam(),
        "sgd_momentum" => Optimizer::SgdMomentum {
            momentum: cfg.parse_or("momentum", 0.9)?,
        },
        other => return Err(HarnessError::Config(format!("unknown optimizer {other:?}"))),
    };
    Ok(TrainConfig {
        epochs: cfg.parse_or("epochs", 60)?,
        batch_size: cfg.parse_or("batch_size", d.batch_size)?,
        learning_rate: cfg.parse_or("learning_rate", d.learning_rate)?,
        lr_decay: cfg.parse_or("lr_decay", d.lr_decay)?,
        optimizer,
        dropout: cfg.parse_or("dropout", d.dropout)?,
        init_scale: cfg.parse_or("init_scale", d.init_scale)?,
        seed: cfg.seed()?,
        stop_at_zero_error: false,
    })
}

/// Result of one network training run.
#[derive(Clone, Debug)]
pub struct DnnOutcome {
    pub name: String,
    pub report: TrainReport,
    pub test_error: f64,
    pub bundle: Vec<u8>,
}

/// Trains a 196-hidden-10 sign network on MNIST; the table is the epoch
/// log. `model` saves the packed bundle, `log` a copy of the epoch log.
pub fn train_dnn(cfg: &Config) -> Result<(Table, DnnOutcome), HarnessError> {
    let layers = dnn_layers(cfg)?;
    let tc = train_config(cfg)?;
    cfg.data_path("mnist")?;
    let data = mnist_dense(&cfg.data_root())?;
    let name = format!(
        "NN STE {}-bit/{}{}",
        layers[0].weight_bits(),
        layers[0].out_dim,
        if layers[0].use_batchnorm { "/bn" } else { "" }
    );
    let input_bits: u32 = cfg.parse_or("input_bits", 4)?;
    if !(1..=8).contains(&input_bits) {
        return Err(HarnessError::Config("input_bits must lie in 1..=8".into()));
    }
    let report = train_ste(layers, unit_interval_inputs(input_bits), &data.train, Some(&data.valid), &tc)?;
    let packed = report.packed()?;
    let test_error = packed.error_rate(&data.test)?;
    let bundle = packed.to_bytes();
    if let Some(p) = cfg.get("model") {
        std::fs::write(p, &bundle)?;
    }
    if let Some(p) = cfg.get("log") {
        write_log(&report.log, BufWriter::new(File::create(p)?))?;
    }
    let mut table = Table::new(&["epoch", "train_loss", "train_err", "valid_err"]);
    for e in &report.log {
        table.push(vec![
            e.epoch.to_string(),
            fmt(e.train_loss),
            fmt(e.train_err),
            e.valid_err.map(fmt).unwrap_or_default(),
        ]);
    }
    Ok((
        table,
        DnnOutcome {
            name,
            report,
            test_error,
            bundle,
        },
    ))
}

/// Train, validation and test parts of a discrete dataset.
struct Splits {
    /// Everything available for training.
    train: DiscreteDataset,
    /// Part of `train` used by discriminative learners.
    fit: DiscreteDataset,
    valid: DiscreteDataset,
    test: DiscreteDataset,
}

fn resolve_dataset(cfg: &Config, name: &str) -> Result<PathBuf, HarnessError> {
    if name.ends_with(".csv") {
        let p = PathBuf::from(name);
        if p.exists() {
            return Ok(p);
        }
        return cfg.data_path(name);
    }
    cfg.data_path(&format!("uci/{name}.csv"))
}

fn splits(cfg: &Config, dataset: &str, seed: u64) -> Result<Splits, HarnessError> {
    if dataset == "mnist" {
        let levels = cfg.parse_or("levels", MNIST_LEVELS)?;
        cfg.data_path("mnist")?;
        let m = mnist_bnc(&cfg.data_root(), levels)?;
        return Ok(Splits {
            train: m.train.clone(),
            fit: m.train,
            valid: m.valid,
            test: m.test,
        });
    }
    let d = read_csv_file(&resolve_dataset(cfg, dataset)?)?;
    let (train, test) = d.split(cfg.parse_or("test_fraction", 0.3)?, seed);
    let (fit, valid) = train.split(cfg.parse_or("valid_fraction", 0.2)?, seed.wrapping_add(100));
    Ok(Splits { train, fit, valid, test })
}

fn structure_for(cfg: &Config, data: &DiscreteDataset) -> Result<Structure, HarnessError> {
    Ok(match cfg.get("structure").unwrap_or("nb") {
        "nb" => learn_structure_nb(data.n_classes(), data.cardinalities())?,
        "tan" => learn_structure_tan(data)?,
        other => return Err(HarnessError::Config(format!("unknown structure {other:?}"))),
    })
}

fn fit_learner(cfg: &Config, learner: &str, s: &Structure, sp: &Splits) -> Result<BayesNetClassifier, HarnessError> {
    let smoothing = cfg.parse_or("smoothing", DEFAULT_SMOOTHING)?;
    let oc = OptimConfig {
        epochs: cfg.parse_or("epochs", 300)?,
        smoothing,
        validation: Some(&sp.valid),
        ..OptimConfig::default()
    };
    let (cpts, gamma) = match learner {
        "ml" => (learn_ml(&sp.train, s, smoothing)?, None),
        "mcl" => (learn_mcl(&sp.fit, s, &oc)?.cpts, None),
        "mm" => match cfg.get("gamma") {
            Some(_) => {
                let g = cfg.parse_or("gamma", 10.0)?;
                (learn_mm(&sp.fit, s, g, &oc)?.cpts, Some(g))
            }
            None => {
                let (g, fit) = tune_mm(&sp.fit, s, &GAMMA_GRID, &oc)?;
                (fit.cpts, Some(g))
            }
        },
        "hybrid" => {
            let g = cfg.parse_or("gamma", 10.0)?;
            (learn_hybrid(&sp.fit, s, cfg.parse_or("lambda", 0.5)?, g, &oc)?.cpts, Some(g))
        }
        "dfe" => (learn_dfe(&sp.train, s, cfg.parse_or("dfe_epochs", 10)?, smoothing)?, None),
        other => return Err(HarnessError::Config(format!("unknown learner {other:?}"))),
    };
    Ok(BayesNetClassifier::new(s.clone(), cpts, gamma)?)
}

fn repr_name(r: Representation) -> String {
    match r {
        Representation::RealDouble => "real_double".into(),
        Representation::ReducedFloat {
            mantissa_bits,
            exponent_bits,
        } => format!("reduced_float({mantissa_bits},{exponent_bits})"),
        Representation::FixedPoint { bits, .. } => format!("fixed_point({bits})"),
    }
}

/// Learns a Bayesian network classifier; `model` saves it.
pub fn train_bnc(cfg: &Config) -> Result<(Table, BayesNetClassifier), HarnessError> {
    let dataset = cfg.get("dataset").unwrap_or("mnist").to_string();
    let learner = cfg.get("learner").unwrap_or("ml").to_string();
    let sp = splits(cfg, &dataset, cfg.seed()?)?;
    let s = structure_for(cfg, &sp.train)?;
    let net = fit_learner(cfg, &learner, &s, &sp)?;
    if let Some(p) = cfg.get("model") {
        bnc_io::write_classifier(&net, BufWriter::new(File::create(p)?))?;
    }
    let mut table = Table::new(&[
        "dataset",
        "structure",
        "learner",
        "gamma",
        "train_ce",
        "test_ce",
        "parameter_bits",
        "serialized_bits",
    ]);
    table.push(vec![
        dataset,
        cfg.get("structure").unwrap_or("nb").to_string(),
        learner,
        net.gamma.map(|g| g.to_string()).unwrap_or_default(),
        fmt(net.error_rate(&sp.train)?),
        fmt(net.error_rate(&sp.test)?),
        net.parameter_bits().to_string(),
        (bnc_io::to_bytes(&net).len() * 8).to_string(),
    ]);
    Ok((table, net))
}

/// Re-encodes a double-precision classifier file; `repr` is `fixed` (with
/// `bits`) or `float` (with `m_bits`, `e_bits`).
pub fn quantize(cfg: &Config) -> Result<(Table, BayesNetClassifier), HarnessError> {
    let src = cfg.existing_path("model")?;
    let net = bnc_io::read_classifier(File::open(&src)?)?;
    let cpts = match cfg.get("repr").unwrap_or("fixed") {
        "fixed" => quantize_fixed(&net.cpts, cfg.parse_or("bits", 6)?)?,
        "float" => quantize_float(&net.cpts, cfg.parse_or("m_bits", 4)?, cfg.parse_or("e_bits", 5)?)?,
        other => return Err(HarnessError::Config(format!("unknown representation {other:?}"))),
    };
    let q = BayesNetClassifier::new(net.structure.clone(), cpts, net.gamma)?;
    if let Some(p) = cfg.get("out_model") {
        bnc_io::write_classifier(&q, BufWriter::new(File::create(p)?))?;
    }
    let mut table = Table::new(&["representation", "parameter_bits", "serialized_bits", "max_normalization_error"]);
    table.push(vec![
        repr_name(q.cpts.representation()),
        q.parameter_bits().to_string(),
        (bnc_io::to_bytes(&q).len() * 8).to_string(),
        format!("{:.6e}", q.cpts.max_normalization_error()),
    ]);
    Ok((table, q))
}

/// Error rate of a saved classifier or network bundle on a test split.
pub fn eval(cfg: &Config) -> Result<Table, HarnessError> {
    let path = cfg.existing_path("model")?;
    let bytes = std::fs::read(&path)?;
    let dataset = cfg.get("dataset").unwrap_or("mnist").to_string();
    let mut table = Table::new(&["model", "dataset", "rows", "missing_rate", "ce"]);
    let rate: f64 = cfg.parse_or("missing_rate", 0.0)?;
    if !(0.0..=1.0).contains(&rate) {
        return Err(HarnessError::Config("missing_rate must lie in [0, 1]".into()));
    }
    if bytes.starts_with(b"qmlp") {
        if dataset != "mnist" || rate > 0.0 {
            return Err(HarnessError::Config("network bundles evaluate on complete MNIST only".into()));
        }
        let net = PackedMLP::from_bytes(&bytes)?;
        cfg.data_path("mnist")?;
    let data = mnist_dense(&cfg.data_root())?;
        let ce = net.error_rate(&data.test)?;
        table.push(vec!["qmlp".into(), dataset, data.test.len().to_string(), fmt(rate), fmt(ce)]);
        return Ok(table);
    }
    let net = bnc_io::from_bytes(&bytes)?;
    let seed = cfg.seed()?;
    let sp = splits(cfg, &dataset, seed)?;
    let test = if rate > 0.0 {
        sp.test.masked(mar_mask(&sp.test, rate, seed))?
    } else {
        sp.test
    };
    let preds = net.predict(&test)?;
    if let Some(p) = cfg.get("predictions") {
        bnc_io::write_predictions(&preds, net.n_classes(), BufWriter::new(File::create(p)?))?;
    }
    let wrong = preds.iter().enumerate().filter(|(n, p)| p.class != test.label(*n)).count();
    table.push(vec![
        format!("bnc {}", repr_name(net.cpts.representation())),
        dataset,
        test.len().to_string(),
        fmt(rate),
        fmt(wrong as f64 / test.len().max(1) as f64),
    ]);
    Ok(table)
}

/// Test error of naive Bayes ML parameters stored with reduced precision.
pub fn sweep_bits(cfg: &Config) -> Result<Table, HarnessError> {
    let dataset = cfg.get("dataset").unwrap_or("mnist").to_string();
    let sp = splits(cfg, &dataset, cfg.seed()?)?;
    let s = learn_structure_nb(sp.train.n_classes(), sp.train.cardinalities())?;
    let ml = learn_ml(&sp.train, &s, cfg.parse_or("smoothing", DEFAULT_SMOOTHING)?)?;
    let m_bits = cfg.list_or("m_bits", &[1u32, 2, 3, 4, 6, 8, 52])?;
    let e_bits = cfg.list_or("e_bits", &[3u32, 4, 5, 8, 11])?;
    let b_bits = cfg.list_or("b_bits", &[2u32, 3, 4, 5, 6, 8, 10])?;
    let mut table = Table::new(&["representation", "m_or_b_bits", "e_bits", "test_ce"]);
    let ce = |cpts| -> Result<f64, HarnessError> { Ok(BayesNetClassifier::new(s.clone(), cpts, None)?.error_rate(&sp.test)?) };
    table.push(vec!["real_double".into(), "52".into(), "11".into(), fmt(ce(ml.clone())?)]);
    for &m in &m_bits {
        for &e in &e_bits {
            table.push(vec!["reduced_float".into(), m.to_string(), e.to_string(), fmt(ce(quantize_float(&ml, m, e)?)?)]);
        }
    }
    for &b in &b_bits {
        table.push(vec!["fixed_point".into(), b.to_string(), String::new(), fmt(ce(quantize_fixed(&ml, b)?)?)]);
    }
    Ok(table)
}

/// Mean classification rate under features missing at random. Bayesian
/// network classifiers marginalize; logistic regression imputes from the
/// five nearest training rows.
pub fn missing_curve(cfg: &Config) -> Result<Table, HarnessError> {
    let names: Vec<String> = cfg.list_or("datasets", &UCI_DATASETS.map(String::from))?;
    let rates = cfg.list_or("rates", &[0.0, 0.2, 0.4, 0.6, 0.7, 0.8, 0.9])?;
    let models = cfg.list_or("models", &["ml", "mcl", "mm", "lr"].map(String::from))?;
    let repeats: usize = cfg.parse_or("repeats", 5)?;
    let k: usize = cfg.parse_or("k", 5)?;
    if rates.iter().any(|r| !(0.0..=1.0).contains(r)) || repeats == 0 {
        return Err(HarnessError::Config("rates must lie in [0, 1] and repeats be positive".into()));
    }
    for m in &models {
        if !["ml", "mcl", "mm", "lr"].contains(&m.as_str()) {
            return Err(HarnessError::Config(format!("unknown model {m:?}")));
        }
    }
    let paths = names.iter().map(|n| resolve_dataset(cfg, n)).collect::<Result<Vec<_>, _>>()?;
    let base_seed = cfg.seed()?;
    // sums[model][rate]
    let mut sums = vec![vec![0.0; rates.len()]; models.len()];
    for path in &paths {
        let data = read_csv_file(path)?;
        for rep in 0..repeats as u64 {
            let seed = base_seed.wrapping_add(rep);
            let (train, test) = data.split(cfg.parse_or("test_fraction", 0.3)?, seed);
            let (fit, valid) = train.split(cfg.parse_or("valid_fraction", 0.2)?, seed.wrapping_add(100));
            let sp = Splits { train, fit, valid, test };
            let s = structure_for(cfg, &sp.train)?;
            for (mi, m) in models.iter().enumerate() {
                let scorer: Box<dyn Fn(&DiscreteDataset) -> Result<f64, HarnessError>> = if m == "lr" {
                    let lr = LogisticRegression::fit(&sp.train, 1e-3, cfg.parse_or("lr_iterations", 300)?, 1.0)?;
                    let reference = sp.train.clone();
                    Box::new(move |t: &DiscreteDataset| {
                        let t = if t.has_missing() { knn_impute(t, &reference, k)? } else { t.clone() };
                        Ok(lr.error_rate(&t))
                    })
                } else {
                    let net = fit_learner(cfg, m, &s, &sp)?;
                    Box::new(move |t: &DiscreteDataset| Ok(net.error_rate(t)?))
                };
                for (ri, &rate) in rates.iter().enumerate() {
                    let mask_seed = seed.wrapping_mul(31).wrapping_add(ri as u64);
                    let t = sp.test.masked(mar_mask(&sp.test, rate, mask_seed))?;
                    sums[mi][ri] += 1.0 - scorer(&t)?;
                }
            }
        }
    }
    let runs = (paths.len() * repeats) as f64;
    let mut table = Table::new(&["model", "rate", "mean_cr"]);
    for (mi, m) in models.iter().enumerate() {
        for (ri, &rate) in rates.iter().enumerate() {
            table.push(vec![m.to_uppercase(), format!("{rate}"), fmt(sums[mi][ri] / runs)]);
        }
    }
    Ok(table)
}

/// MNIST comparison of sign networks and naive Bayes classifiers:
/// error and serialized size.
pub fn mnist_table(cfg: &Config) -> Result<Table, HarnessError> {
    cfg.data_path("mnist")?;
    let mut table = Table::new(&["model", "ce", "kbits"]);
    let kbits = |bytes: usize| format!("{:.2}", bytes as f64 * 8.0 / 1000.0);
    for (hidden, bits, bn) in [(193, 1, true), (65, 3, false), (65, 3, true)] {
        let mut c = cfg.clone();
        c.set("hidden", &hidden.to_string());
        c.set("bits", &bits.to_string());
        c.set("out_bits", &bits.to_string());
        c.set("batchnorm", &bn.to_string());
        c.set("epochs", &cfg.parse_or("dnn_epochs", 60usize)?.to_string());
        let (_, out) = train_dnn(&c)?;
        table.push(vec![out.name, fmt(out.test_error), kbits(out.bundle.len())]);
    }
    let m = mnist_bnc(&cfg.data_root(), cfg.parse_or("levels", MNIST_LEVELS)?)?;
    let sp = Splits {
        train: m.train.clone(),
        fit: m.train,
        valid: m.valid,
        test: m.test,
    };
    let s = learn_structure_nb(sp.train.n_classes(), sp.train.cardinalities())?;
    let ml = fit_learner(cfg, "ml", &s, &sp)?;
    table.push(vec!["BN NB ML".into(), fmt(ml.error_rate(&sp.test)?), kbits(bnc_io::to_bytes(&ml).len())]);
    let bits: u32 = cfg.parse_or("bnc_bits", 6)?;
    let mm = fit_learner(cfg, "mm", &s, &sp)?;
    let q = BayesNetClassifier::new(s.clone(), quantize_fixed(&mm.cpts, bits)?, mm.gamma)?;
    table.push(vec![format!("BN NB MM ({bits}-bit)"), fmt(q.error_rate(&sp.test)?), kbits(bnc_io::to_bytes(&q).len())]);
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_data() -> Config {
        let mut c = Config::new();
        c.set("data", concat!(env!("CARGO_MANIFEST_DIR"), "/../../data"));
        c
    }

    #[test]
    fn bench_rejects_bad_sizes() {
        let mut c = Config::new();
        c.set("sizes", "300");
        assert_eq!(bench_gemm(&c).unwrap_err().exit_code(), 2);
        c.set("sizes", "256");
        c.set("repeats", "2");
        assert_eq!(bench_gemm(&c).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn missing_dataset_is_a_config_error() {
        let mut c = Config::new();
        c.set("data", "/nonexistent");
        assert_eq!(mnist_table(&c).unwrap_err().exit_code(), 2);
        assert_eq!(sweep_bits(&c).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn small_missing_curve_is_reproducible() {
        let mut c = with_data();
        c.set("datasets", "zoo");
        c.set("rates", "0,1");
        c.set("repeats", "1");
        c.set("models", "ml,lr");
        let a = missing_curve(&c).unwrap();
        let b = missing_curve(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 4);
    }

    #[test]
    fn train_quantize_eval_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = dir.path().join("m.bnc");
        let q = dir.path().join("q.bnc");
        let mut c = with_data();
        c.set("dataset", "heart_disease");
        c.set("model", model.to_str().unwrap());
        let (t, net) = train_bnc(&c).unwrap();
        assert_eq!(t.rows.len(), 1);
        let e = eval(&c).unwrap();
        let ce: f64 = e.rows[0][4].parse().unwrap();
        assert_eq!(format!("{ce:.6}"), t.rows[0][5]);
        c.set("out_model", q.to_str().unwrap());
        let (_, quant) = quantize(&c).unwrap();
        assert_eq!(quant.structure, net.structure);
        c.set("model", q.to_str().unwrap());
        assert!(eval(&c).unwrap().rows[0][0].contains("fixed_point(6)"));
    }
}
