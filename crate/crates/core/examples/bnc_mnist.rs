//! Naive Bayes on discretized MNIST: generative ML parameters, margin
//! trained parameters and their reduced-precision versions.

use std::path::PathBuf;

use quantbench::bnc::{io, learn_ml, learn_mm, learn_structure_nb, quantize_fixed, quantize_float, BayesNetClassifier, OptimConfig};
use quantbench::data::Mnist;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::var_os("QUANTBENCH_DATA").map_or_else(|| PathBuf::from("data"), PathBuf::from);
    let m = Mnist::load(&root.join("mnist"))?.downsampled()?;
    let (all, test) = m.discrete(4)?;
    let keep = all.non_constant_features();
    let (all, test) = (all.select_features(&keep), test.select_features(&keep));
    let train = all.subset(&(0..50_000).collect::<Vec<_>>());
    let valid = all.subset(&(50_000..60_000).collect::<Vec<_>>());

    let s = learn_structure_nb(10, train.cardinalities())?;
    let ml = learn_ml(&train, &s, 1.0)?;
    println!("ML double: {:.2}%", 100.0 * BayesNetClassifier::new(s.clone(), ml.clone(), None)?.error_rate(&test)?);
    for (mb, eb) in [(2, 3), (4, 5), (8, 8)] {
        let q = BayesNetClassifier::new(s.clone(), quantize_float(&ml, mb, eb)?, None)?;
        println!("ML float m={mb} e={eb}: {:.2}%", 100.0 * q.error_rate(&test)?);
    }

    let gamma = 50.0;
    let cfg = OptimConfig { validation: Some(&valid), ..OptimConfig::default() };
    let fit = learn_mm(&train, &s, gamma, &cfg)?;
    let q = BayesNetClassifier::new(s, quantize_fixed(&fit.cpts, 6)?, Some(gamma))?;
    println!(
        "MM 6-bit fixed: {:.2}%, {} bits serialized",
        100.0 * q.error_rate(&test)?,
        io::to_bytes(&q).len() * 8
    );
    Ok(())
}
