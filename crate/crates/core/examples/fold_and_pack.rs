//! Folds batch normalization into integer thresholds, packs the network
//! and checks the packed forward pass against the real-valued one.

use ndarray::Array2;
use quantbench::quantdnn::{sign_inputs, LayerSpec, PackedMLP, QuantMLP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let layers = vec![
        LayerSpec::sign(32, 64, 1, true),
        LayerSpec::sign(64, 64, 2, true),
        LayerSpec::count(64, 4, 1),
    ];
    let mut net = QuantMLP::random(layers, sign_inputs(), 1.0, 5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for l in 0..2 {
        let bn = net.batchnorm_mut(l).expect("batch norm layer");
        for r in 0..bn.mean.len() {
            bn.mean[r] = rng.gen_range(-2.0..2.0);
            bn.gain[r] = rng.gen_range(-1.0..1.0);
        }
    }
    let folded = net.fold_batchnorm()?;
    let packed = PackedMLP::from_folded(&folded)?;

    let x = Array2::from_shape_fn((500, 32), |_| if rng.gen() { 1.0 } else { -1.0 });
    let real = net.forward(x.view())?;
    let fast = packed.forward(x.view())?;
    println!("hidden identical: {}", real.hidden == fast.hidden);
    println!("logits identical: {}", real.logits == fast.logits);

    let bytes = packed.to_bytes();
    println!("bundle {} bytes, float32 {} bytes", bytes.len(), net.float32_bytes());
    assert_eq!(PackedMLP::from_bytes(&bytes)?, packed);
    Ok(())
}
