//! Streams a UCI table through bounded integer counters and a log lookup
//! table, then classifies with the resulting integer-only parameters.

use std::path::PathBuf;

use quantbench::bnc::{io, learn_structure_nb, OnlineState};
use quantbench::data::read_csv_file;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::var_os("QUANTBENCH_DATA").map_or_else(|| PathBuf::from("data"), PathBuf::from);
    let data = read_csv_file(&root.join("uci").join("breast_cancer.csv"))?;
    let (train, test) = data.split(0.3, 3);
    let s = learn_structure_nb(train.n_classes(), train.cardinalities())?;

    for bits in [4, 8, 16] {
        let mut online = OnlineState::new(s.clone(), bits)?;
        for i in 0..train.len() {
            online.update(train.row(i), train.label(i))?;
        }
        let net = online.classifier();
        println!(
            "{bits:>2}-bit counters: {} halvings, test error {:.3}",
            online.overflows(),
            net.error_rate(&test)?
        );
        if bits == 8 {
            let preds = net.predict(&test.subset(&[0, 1, 2]))?;
            io::write_predictions(&preds, net.n_classes(), std::io::stdout())?;
        }
    }
    Ok(())
}
