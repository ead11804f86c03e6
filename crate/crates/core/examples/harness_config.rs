//! Drives an experiment through the harness: INI config, command-line
//! style overrides and a CSV table with the config hash trailer.

use quantbench::harness::{bench_gemm, Config};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = Config::from_ini_str("repeats = 5\nsizes = 256\nseed = 1\n")?;
    cfg.apply_overrides(&["--sizes".to_string(), "256,512".to_string()])?;
    println!("config hash {}", cfg.hash());
    let table = bench_gemm(&cfg)?;
    table.write_to(std::io::stdout(), &cfg.hash(), cfg.seed()?)?;
    Ok(())
}
