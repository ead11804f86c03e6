//! Trains a 1-bit 196-193-10 network with batch norm on 14×14 MNIST.
//!
//! Usage: `ste_mnist [epochs]` (default 5). Data comes from
//! `$QUANTBENCH_DATA/mnist` or `./data/mnist`.

use std::path::PathBuf;

use quantbench::data::Mnist;
use quantbench::quantdnn::{train_ste, unit_interval_inputs, LayerSpec, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5);
    let root = std::env::var_os("QUANTBENCH_DATA").map_or_else(|| PathBuf::from("data"), PathBuf::from);
    let mnist = Mnist::load(&root.join("mnist"))?.downsampled()?;
    let (all, test) = mnist.dense()?;
    let (train, valid) = (all.range(0, 50_000), all.range(50_000, 60_000));

    let layers = vec![LayerSpec::sign(196, 193, 1, true), LayerSpec::count(193, 10, 1)];
    let cfg = TrainConfig { epochs, seed: 1, ..TrainConfig::default() };
    let report = train_ste(layers, unit_interval_inputs(4), &train, Some(&valid), &cfg)?;
    for e in &report.log {
        println!("epoch {:>3} loss {:.4} train {:.4} valid {:.4}", e.epoch, e.train_loss, e.train_err, e.valid_err.unwrap_or(f64::NAN));
    }
    let packed = report.packed()?;
    println!(
        "best epoch {}: test error {:.2}%, bundle {} bytes",
        report.best_epoch,
        100.0 * packed.error_rate(&test)?,
        packed.to_bytes().len()
    );
    Ok(())
}
