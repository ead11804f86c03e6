use ndarray::Array2;
use proptest::prelude::*;
use quantbench::bitkernels::{
    binary_dot, pack_bits, quantize_scalar, signed_width, unpack_bits, BitMatrix, QuantKind, QuantSpec,
};
use quantbench::harness::Config;
use quantbench::quantdnn::{sign_inputs, LayerSpec, PackedMLP, QuantMLP};

fn sign_vec(max: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), 1..max)
}

proptest! {
    #[test]
    fn pack_unpack_round_trip(bits in sign_vec(300)) {
        let m = BitMatrix::from_fn(1, bits.len(), |_, c| bits[c]);
        prop_assert!(m.padding_is_zero());
        let back: Vec<bool> = m.unpack().iter().map(|&s| s > 0).collect();
        prop_assert_eq!(back, bits);
        prop_assert_eq!(BitMatrix::from_bytes(&m.to_bytes()).unwrap(), m);
    }

    #[test]
    fn binary_dot_matches_naive(pairs in prop::collection::vec(any::<(bool, bool)>(), 1..500)) {
        let n = pairs.len();
        let a = BitMatrix::from_fn(1, n, |_, c| pairs[c].0);
        let b = BitMatrix::from_fn(1, n, |_, c| pairs[c].1);
        let want: i64 = pairs.iter().map(|&(x, y)| if x == y { 1 } else { -1 }).sum();
        prop_assert_eq!(binary_dot(a.row(0), b.row(0), n).unwrap(), want);
    }

    #[test]
    fn pack_bits_round_trip(bits in 1u32..=16, raw in prop::collection::vec(any::<u64>(), 0..100)) {
        let mask = (1u64 << bits) - 1;
        let values: Vec<u64> = raw.iter().map(|v| v & mask).collect();
        let bytes = pack_bits(values.iter().copied(), bits);
        prop_assert_eq!(bytes.len(), (values.len() * bits as usize).div_ceil(8));
        prop_assert_eq!(unpack_bits(&bytes, bits, values.len()).unwrap(), values);
    }

    #[test]
    fn signed_width_fits(values in prop::collection::vec(-100_000i64..100_000, 1..50)) {
        let w = signed_width(&values);
        let lo = -(1i64 << (w - 1));
        let hi = (1i64 << (w - 1)) - 1;
        prop_assert!(values.iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn fixed_point_nearest_is_close_and_on_grid(bits in 2u32..12, x in -10.0f64..10.0, seed in any::<u64>()) {
        let step = 0.125;
        let spec = QuantSpec::fixed_point(bits, step);
        let q = quantize_scalar(x, &spec, &mut spec.rng()).unwrap();
        prop_assert!(q.value.abs() <= spec.max_value() + step);
        prop_assert_eq!((q.value / step).fract(), 0.0);
        if !q.saturated {
            prop_assert!((q.value - x).abs() <= step / 2.0 + 1e-12);
        }
        let s = QuantSpec::stochastic(QuantKind::FixedPoint { bits, step }, seed);
        let r = quantize_scalar(x, &s, &mut s.rng()).unwrap();
        if !r.saturated {
            prop_assert!((r.value - x).abs() < step);
        }
    }

    #[test]
    fn reduced_float_relative_error(m in 2u32..10, x in 1e-2f64..1e2) {
        let spec = QuantSpec::reduced_float(m, 8);
        let q = quantize_scalar(x, &spec, &mut spec.rng()).unwrap();
        prop_assert!(((q.value - x) / x).abs() <= 2f64.powi(-(m as i32)));
    }

    #[test]
    fn bundle_round_trip_preserves_predictions(seed in 0u64..1000, d in 2usize..10, h in 1usize..8, bits in 1u32..4) {
        let layers = vec![LayerSpec::sign(d, h, bits, true), LayerSpec::count(h, 3, 1)];
        let net = QuantMLP::random(layers, sign_inputs(), 1.0, seed).unwrap();
        let packed = PackedMLP::from_folded(&net.fold_batchnorm().unwrap()).unwrap();
        let back = PackedMLP::from_bytes(&packed.to_bytes()).unwrap();
        prop_assert_eq!(&back, &packed);
        let x = Array2::from_shape_fn((8, d), |(i, j)| if (i * 7 + j * 3 + seed as usize) % 2 == 0 { 1.0 } else { -1.0 });
        prop_assert_eq!(back.predict(x.view()).unwrap(), packed.predict(x.view()).unwrap());
    }

    #[test]
    fn config_hash_ignores_order_and_output(keys in prop::collection::btree_map("[a-z]{1,6}", "[a-z0-9]{1,6}", 1..6)) {
        let mut a = Config::new();
        let mut b = Config::new();
        for (k, v) in &keys {
            a.set(k, v);
        }
        for (k, v) in keys.iter().rev() {
            b.set(k, v);
        }
        b.set("out", "elsewhere.csv");
        if !keys.contains_key("out") {
            prop_assert_eq!(a.hash(), b.hash());
        }
    }
}
