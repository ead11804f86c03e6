//! Classifies a UCI table with a growing share of features missing at
//! random. The Bayes net marginalizes them out; no imputation is needed.

use std::path::PathBuf;

use quantbench::bnc::{learn_ml, learn_structure_tan, BayesNetClassifier};
use quantbench::data::{mar_mask, read_csv_file};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "zoo".into());
    let root = std::env::var_os("QUANTBENCH_DATA").map_or_else(|| PathBuf::from("data"), PathBuf::from);
    let data = read_csv_file(&root.join("uci").join(format!("{name}.csv")))?;
    let (train, test) = data.split(0.3, 1);

    let s = learn_structure_tan(&train)?;
    let cpts = learn_ml(&train, &s, 1.0)?;
    let net = BayesNetClassifier::new(s, cpts, None)?;
    println!("{name}: {} rows, {} features, majority rate {:.3}", data.len(), data.n_features(), test.majority_rate());
    for rate in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
        let masked = test.masked(mar_mask(&test, rate, 7))?;
        println!("missing {rate:.1}: classification rate {:.3}", 1.0 - net.error_rate(&masked)?);
    }
    Ok(())
}
