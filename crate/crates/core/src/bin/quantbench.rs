use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use quantbench::harness::{self, Config, HarnessError, Table};

#[derive(Parser)]
#[command(name = "quantbench", version, about = "Quantized networks and Bayesian network classifiers, with reproducible CSV experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Packed sign GEMM against naive f32 GEMM
    BenchGemm(Settings),
    /// Straight-through training of a sign network on MNIST
    TrainDnn(Settings),
    /// Learn a Bayesian network classifier
    TrainBnc(Settings),
    /// Store a saved classifier with reduced precision
    Quantize(Settings),
    /// Error rate of a saved model
    Eval(Settings),
    /// Error against parameter bit width
    SweepBits(Settings),
    /// Classification rate under missing features
    MissingCurve(Settings),
    /// MNIST error and size comparison
    MnistTable(Settings),
}

#[derive(clap::Args)]
struct Settings {
    /// INI file of `key = value` settings
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV destination (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
    /// `--key value` pairs overriding the file
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let (cmd, s) = match cli.command {
        Command::BenchGemm(s) => ("bench-gemm", s),
        Command::TrainDnn(s) => ("train-dnn", s),
        Command::TrainBnc(s) => ("train-bnc", s),
        Command::Quantize(s) => ("quantize", s),
        Command::Eval(s) => ("eval", s),
        Command::SweepBits(s) => ("sweep-bits", s),
        Command::MissingCurve(s) => ("missing-curve", s),
        Command::MnistTable(s) => ("mnist-table", s),
    };
    let mut cfg = match &s.config {
        Some(p) => Config::from_file(p)?,
        None => Config::new(),
    };
    cfg.apply_overrides(&s.overrides)?;
    let out = s.out.or_else(|| cfg.get("out").map(PathBuf::from));
    cfg.set("command", cmd);
    let table: Table = match cmd {
        "bench-gemm" => harness::bench_gemm(&cfg)?,
        "train-dnn" => {
            let (t, o) = harness::train_dnn(&cfg)?;
            eprintln!("{}: test error {:.4}, bundle {} bytes", o.name, o.test_error, o.bundle.len());
            t
        }
        "train-bnc" => harness::train_bnc(&cfg)?.0,
        "quantize" => harness::quantize(&cfg)?.0,
        "eval" => harness::eval(&cfg)?,
        "sweep-bits" => harness::sweep_bits(&cfg)?,
        "missing-curve" => harness::missing_curve(&cfg)?,
        _ => harness::mnist_table(&cfg)?,
    };
    let (hash, seed) = (cfg.hash(), cfg.seed()?);
    match out {
        Some(p) => table.write_to(BufWriter::new(File::create(p)?), &hash, seed)?,
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            table.write_to(&mut lock, &hash, seed)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
