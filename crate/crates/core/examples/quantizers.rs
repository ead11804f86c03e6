//! Scalar fixed-point and reduced-float rounding, plus the binary and
//! ternary weight projections.

use ndarray::array;
use quantbench::bitkernels::{
    quantize_binary_scaled, quantize_scalar, quantize_ternary, Granularity, QuantKind, QuantSpec,
    TERNARY_THRESHOLD_FACTOR,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = 0.3;
    for spec in [QuantSpec::fixed_point(4, 0.125), QuantSpec::reduced_float(2, 3)] {
        let q = quantize_scalar(x, &spec, &mut spec.rng())?;
        println!("{:?}: {x} -> {} (code {})", spec.kind, q.value, q.code);
    }

    let spec = QuantSpec::stochastic(QuantKind::FixedPoint { bits: 4, step: 0.125 }, 42);
    let mut rng = spec.rng();
    let draws = 10_000;
    let mut sum = 0.0;
    for _ in 0..draws {
        sum += quantize_scalar(x, &spec, &mut rng)?.value;
    }
    println!("stochastic mean over {draws} draws: {:.4}", sum / draws as f64);

    let w = array![[0.9, -0.1, 0.4, -0.7], [0.05, 0.2, -0.6, 0.3]];
    let b = quantize_binary_scaled(w.view(), Granularity::PerRow)?;
    println!("binary, per-row alpha {:?}\n{}", b.alphas, b.decode());
    let t = quantize_ternary(w.view(), TERNARY_THRESHOLD_FACTOR)?;
    println!("ternary, scale {:.3}\n{}", t.scale, t.decode());
    Ok(())
}
