//! Packs random sign matrices, multiplies them with XNOR/popcount and
//! compares the result and runtime with a naive f32 product.

use std::time::Instant;

use quantbench::bitkernels::{binary_gemm, float_gemm_naive, BitMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 512;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a: Vec<f32> = (0..n * n).map(|_| if rng.gen() { 1.0 } else { -1.0 }).collect();
    let b: Vec<f32> = (0..n * n).map(|_| if rng.gen() { 1.0 } else { -1.0 }).collect();
    let pa = BitMatrix::from_fn(n, n, |r, c| a[r * n + c] > 0.0);
    let pb = BitMatrix::from_fn(n, n, |r, c| b[r * n + c] > 0.0);

    let t = Instant::now();
    let reference = float_gemm_naive(&a, &b, n, n, n);
    let float_ms = t.elapsed().as_secs_f64() * 1e3;
    let t = Instant::now();
    let packed = binary_gemm(&pa, &pb)?;
    let binary_ms = t.elapsed().as_secs_f64() * 1e3;

    let exact = (0..n).all(|i| (0..n).all(|j| packed.get(i, j) as f32 == reference[i * n + j]));
    println!("{n}x{n}: exact={exact} float32 {float_ms:.1} ms, binary {binary_ms:.2} ms");
    println!("payload {} bytes vs {} bytes as f32", pa.payload_bytes(), 4 * n * n);

    let bytes = pa.to_bytes();
    assert_eq!(BitMatrix::from_bytes(&bytes)?, pa);
    println!("serialized with header: {} bytes", bytes.len());
    Ok(())
}
