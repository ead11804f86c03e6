use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2, Axis};

use crate::bitkernels::{
    binary_gemm, fixed_gemm, pack_bits, quantize_scalar, signed_width, ternary_gemm, unpack_bits, BitMatrix, FixedTensor,
    KernelError, QuantKind, QuantSpec, TernaryMatrix,
};
use crate::data::DenseDataset;
use crate::manifest::{expand, run_length};

use super::net::{argmax_row, Forward, QuantMLP};
use super::{Activation, DnnError};

const MAGIC: &str = "qmlp 1";
const CHUNK: usize = 4096;

/// Weights of one layer, one row per output unit.
#[derive(Clone, Debug, PartialEq)]
pub enum PackedWeights {
    Binary(BitMatrix),
    Ternary(TernaryMatrix),
    Fixed(FixedTensor),
}

impl PackedWeights {
    fn dims(&self) -> (usize, usize) {
        match self {
            PackedWeights::Binary(m) => (m.rows(), m.cols()),
            PackedWeights::Ternary(m) => (m.rows(), m.cols()),
            PackedWeights::Fixed(m) => (m.rows(), m.cols()),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            PackedWeights::Binary(_) => "binary",
            PackedWeights::Ternary(_) => "ternary",
            PackedWeights::Fixed(_) => "fixed",
        }
    }

    /// `out × in` tensor of the codes.
    fn as_fixed(&self) -> FixedTensor {
        match self {
            PackedWeights::Binary(m) => FixedTensor::from_bits(m),
            PackedWeights::Ternary(m) => {
                let values = (0..m.rows()).flat_map(|r| (0..m.cols()).map(move |c| i64::from(m.get(r, c)))).collect();
                FixedTensor::new(m.rows(), m.cols(), values, 2, 1.0).expect("ternary codes fit two bits")
            }
            PackedWeights::Fixed(m) => m.clone(),
        }
    }
}

/// One layer of integer inference.
///
/// A sign layer outputs `+1` where `acc >= thresholds[r]`; a count layer
/// outputs `acc * scales[r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedLayer {
    pub activation: Activation,
    pub weights: PackedWeights,
    pub thresholds: Vec<i64>,
    pub scales: Vec<f64>,
}

/// Integer-only network built from a folded [`QuantMLP`].
#[derive(Clone, Debug, PartialEq)]
pub struct PackedMLP {
    pub input_bits: u32,
    pub input_step: f64,
    pub layers: Vec<PackedLayer>,
}

fn fits(values: &[i64], bits: u32) -> bool {
    if bits == 1 {
        return values.iter().all(|&v| v == 1 || v == -1);
    }
    signed_width(values) <= bits
}

impl PackedMLP {
    pub fn from_folded(net: &QuantMLP) -> Result<Self, DnnError> {
        let folded = net.folded().ok_or(DnnError::NotFolded)?;
        let q = net.quantized()?;
        let (input_bits, input_step) = match net.input_spec().kind {
            QuantKind::FixedPoint { bits, step } => (bits, step),
            _ => unreachable!("validated"),
        };
        let mut layers = Vec::with_capacity(q.len());
        for (l, spec) in net.layers().iter().enumerate() {
            let (out, inp) = (spec.out_dim, spec.in_dim);
            let mut codes: Vec<i64> = q[l].codes.iter().map(|&v| v as i64).collect();
            let (thresholds, scales) = match (&folded[l], spec.activation) {
                (Some(f), Activation::Sign) => {
                    for (r, &neg) in f.negate.iter().enumerate() {
                        if neg {
                            codes[r * inp..(r + 1) * inp].iter_mut().for_each(|v| *v = -*v);
                        }
                    }
                    (f.thresholds.clone(), Vec::new())
                }
                (_, Activation::LinearCount) => (Vec::new(), net.unit_scales(l, &q[l])),
                _ => return Err(DnnError::NotFolded),
            };
            let weights = match spec.weight_spec.kind {
                QuantKind::BinaryScaled | QuantKind::FixedPoint { bits: 1, .. } => {
                    PackedWeights::Binary(BitMatrix::from_fn(out, inp, |r, c| codes[r * inp + c] > 0))
                }
                QuantKind::TernarySymmetric => {
                    let v: Vec<i8> = codes.iter().map(|&c| c as i8).collect();
                    PackedWeights::Ternary(TernaryMatrix::from_values(out, inp, &v)?)
                }
                QuantKind::FixedPoint { bits, .. } => {
                    let bits = if fits(&codes, bits) { bits } else { signed_width(&codes) };
                    PackedWeights::Fixed(FixedTensor::new(out, inp, codes, bits, 1.0)?)
                }
                _ => unreachable!("validated"),
            };
            layers.push(PackedLayer {
                activation: spec.activation,
                weights,
                thresholds,
                scales,
            });
        }
        Ok(PackedMLP {
            input_bits,
            input_step,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.dims().1
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map(|l| l.weights.dims().0).unwrap_or(0)
    }

    fn input_codes(&self, x: ArrayView2<f64>) -> Result<FixedTensor, DnnError> {
        let spec = QuantSpec::fixed_point(self.input_bits, self.input_step);
        let mut rng = spec.rng();
        let codes = x
            .iter()
            .map(|&v| quantize_scalar(v, &spec, &mut rng).map(|q| q.code))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FixedTensor::new(x.nrows(), x.ncols(), codes, self.input_bits, 1.0)?)
    }

    /// Integer forward pass. `pre_activations` holds the (possibly negated)
    /// integer accumulators.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Forward, DnnError> {
        if x.ncols() != self.input_dim() {
            return Err(DnnError::Shape(format!("inputs have {} columns, expected {}", x.ncols(), self.input_dim())));
        }
        let n = x.nrows();
        let mut hidden_bits: Option<BitMatrix> = None;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut hidden = Vec::new();
        let mut logits = Array2::zeros((n, 0));
        for (l, layer) in self.layers.iter().enumerate() {
            let (out, _) = layer.weights.dims();
            let acc: Vec<i64> = match &hidden_bits {
                None => {
                    debug_assert_eq!(l, 0);
                    let xc = self.input_codes(x)?;
                    fixed_gemm(&xc, &layer.weights.as_fixed().transpose())?.values().to_vec()
                }
                Some(h) => match &layer.weights {
                    PackedWeights::Binary(w) => binary_gemm(h, w)?.data,
                    PackedWeights::Ternary(w) => ternary_gemm(h, w)?.data,
                    PackedWeights::Fixed(w) => fixed_gemm(&FixedTensor::from_bits(h), &w.transpose())?.values().to_vec(),
                },
            };
            let acc = Array2::from_shape_vec((n, out), acc.into_iter().map(|v| v as f64).collect::<Vec<_>>())
                .map_err(|e| DnnError::Shape(e.to_string()))?;
            match layer.activation {
                Activation::Sign => {
                    let z = Array2::from_shape_fn((n, out), |(i, r)| {
                        if acc[[i, r]] as i64 >= layer.thresholds[r] { 1.0 } else { -1.0 }
                    });
                    hidden_bits = Some(BitMatrix::from_fn(n, out, |i, r| z[[i, r]] > 0.0));
                    logits = z.clone();
                    hidden.push(z);
                }
                Activation::LinearCount => {
                    logits = Array2::from_shape_fn((n, out), |(i, r)| acc[[i, r]] * layer.scales[r]);
                }
            }
            pre.push(acc);
        }
        Ok(Forward {
            logits,
            pre_activations: pre,
            hidden,
        })
    }

    /// Arg-max class per row; ties go to the lowest class.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>, DnnError> {
        let mut out = Vec::with_capacity(x.nrows());
        let mut start = 0;
        while start < x.nrows() {
            let end = (start + CHUNK).min(x.nrows());
            let f = self.forward(x.slice(ndarray::s![start..end, ..]))?;
            out.extend(f.logits.axis_iter(Axis(0)).map(argmax_row));
            start = end;
        }
        Ok(out)
    }

    pub fn error_rate(&self, data: &DenseDataset) -> Result<f64, DnnError> {
        if data.is_empty() {
            return Err(DnnError::Config("empty dataset".into()));
        }
        let pred = self.predict(data.inputs.view())?;
        let wrong = pred.iter().zip(&data.labels).filter(|(p, y)| p != y).count();
        Ok(wrong as f64 / data.len() as f64)
    }

    /// Weight storage in bits.
    pub fn weight_bits(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let (r, c) = l.weights.dims();
                let b = match &l.weights {
                    PackedWeights::Binary(_) => 1,
                    PackedWeights::Ternary(_) => 2,
                    PackedWeights::Fixed(m) => m.bits() as usize,
                };
                r * c * b
            })
            .sum()
    }

    /// Text manifest followed by one bit-packed payload per layer: weight
    /// codes in two's complement (signs as single bits), then for sign layers
    /// the thresholds at their smallest signed width. Every payload starts on
    /// a byte boundary.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), DnnError> {
        let mut head = format!("{MAGIC}\ninput {} {:?}\nlayers {}\n", self.input_bits, self.input_step, self.layers.len());
        let mut payload = Vec::new();
        for layer in &self.layers {
            let (out, inp) = layer.weights.dims();
            let t = layer.weights.as_fixed();
            head.push_str(&format!("layer {} {inp} {out} {} {}", layer.activation.name(), layer.weights.name(), t.bits()));
            payload.extend(pack_bits(encode(t.values(), t.bits()), t.bits()));
            match layer.activation {
                Activation::Sign => {
                    let bits = signed_width(&layer.thresholds);
                    head.push_str(&format!(" thresholds {bits}"));
                    payload.extend(pack_bits(encode(&layer.thresholds, bits), bits));
                }
                Activation::LinearCount => {
                    let toks: Vec<String> = layer.scales.iter().map(|s| format!("{s:?}")).collect();
                    head.push_str(&format!(" scales {}", run_length(&toks)));
                }
            }
            head.push('\n');
        }
        head.push_str("data\n");
        w.write_all(head.as_bytes())?;
        w.write_all(&payload)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, DnnError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        PackedMLP::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DnnError> {
        let bad = |m: &str| DnnError::Format(m.to_string());
        let marker = b"\ndata\n";
        let split = bytes.windows(marker.len()).position(|w| w == marker).ok_or_else(|| bad("missing data marker"))?;
        let head = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("manifest is not text"))?;
        let mut payload = &bytes[split + marker.len()..];
        let mut lines = head.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("bad magic"));
        }
        fn num<T: std::str::FromStr>(s: Option<&&str>) -> Result<T, DnnError> {
            s.and_then(|v| v.parse().ok()).ok_or_else(|| DnnError::Format("bad number".into()))
        }
        let input: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        if input.len() != 3 || input[0] != "input" {
            return Err(bad("bad input line"));
        }
        let input_bits: u32 = num(input.get(1))?;
        let input_step: f64 = num(input.get(2))?;
        let count_line: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        if count_line.len() != 2 || count_line[0] != "layers" {
            return Err(bad("bad layer count"));
        }
        let n_layers: usize = num(count_line.get(1))?;
        if n_layers == 0 {
            return Err(DnnError::Empty);
        }
        let take = |payload: &mut &[u8], count: usize, bits: u32| -> Result<Vec<i64>, DnnError> {
            if !(1..=64).contains(&bits) {
                return Err(DnnError::Format("bad width".into()));
            }
            let len = count
                .checked_mul(bits as usize)
                .ok_or_else(|| DnnError::Format("bad shape".into()))?
                .div_ceil(8);
            if payload.len() < len {
                return Err(DnnError::Kernel(KernelError::Corrupt("truncated payload")));
            }
            let raw = unpack_bits(&payload[..len], bits, count)?;
            *payload = &payload[len..];
            Ok(decode(raw, bits))
        };
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let f: Vec<&str> = lines.next().ok_or_else(|| bad("missing layer line"))?.split_whitespace().collect();
            if f.len() < 8 || f[0] != "layer" {
                return Err(bad("bad layer line"));
            }
            let activation = match f[1] {
                "sign" => Activation::Sign,
                "linear_count" => Activation::LinearCount,
                _ => return Err(bad("unknown activation")),
            };
            let inp: usize = num(f.get(2))?;
            let out: usize = num(f.get(3))?;
            let bits: u32 = num(f.get(5))?;
            let codes = take(&mut payload, out * inp, bits)?;
            let weights = match (f[4], bits) {
                ("binary", 1) => PackedWeights::Binary(BitMatrix::from_fn(out, inp, |r, c| codes[r * inp + c] > 0)),
                ("ternary", 2) => {
                    let v: Vec<i8> = codes.iter().map(|&c| c as i8).collect();
                    PackedWeights::Ternary(TernaryMatrix::from_values(out, inp, &v)?)
                }
                ("fixed", _) => PackedWeights::Fixed(FixedTensor::new(out, inp, codes, bits, 1.0)?),
                _ => return Err(bad("unknown weight kind")),
            };
            let (thresholds, scales) = match (activation, f[6]) {
                (Activation::Sign, "thresholds") => {
                    if f.len() != 8 {
                        return Err(bad("bad layer line"));
                    }
                    (take(&mut payload, out, num(f.get(7))?)?, Vec::new())
                }
                (Activation::LinearCount, "scales") => {
                    let scales = expand(&f[7..])
                        .map_err(DnnError::Format)?
                        .iter()
                        .map(|s| num(Some(&s.as_str())))
                        .collect::<Result<Vec<f64>, _>>()?;
                    if scales.len() != out {
                        return Err(bad("scale count"));
                    }
                    (Vec::new(), scales)
                }
                _ => return Err(bad("bad layer line")),
            };
            layers.push(PackedLayer {
                activation,
                weights,
                thresholds,
                scales,
            });
        }
        if !payload.is_empty() {
            return Err(DnnError::Kernel(KernelError::Corrupt("trailing bytes")));
        }
        Ok(PackedMLP {
            input_bits,
            input_step,
            layers,
        })
    }
}

fn encode(values: &[i64], bits: u32) -> impl Iterator<Item = u64> + '_ {
    values.iter().map(move |&v| if bits == 1 { u64::from(v > 0) } else { v as u64 })
}

fn decode(raw: Vec<u64>, bits: u32) -> Vec<i64> {
    raw.into_iter()
        .map(|u| match bits {
            1 => if u == 1 { 1 } else { -1 },
            64 => u as i64,
            _ => ((u << (64 - bits)) as i64) >> (64 - bits),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantdnn::{sign_inputs, unit_interval_inputs, LayerSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn folded(seed: u64, bn: bool) -> QuantMLP {
        let layers = vec![
            LayerSpec::sign(12, 9, 3, bn),
            LayerSpec::new(9, 8, QuantSpec::nearest(QuantKind::TernarySymmetric), Activation::Sign, bn),
            LayerSpec::new(8, 7, QuantSpec::nearest(QuantKind::BinaryScaled), Activation::Sign, bn),
            LayerSpec::count(7, 4, 2),
        ];
        let mut net = QuantMLP::random(layers, unit_interval_inputs(8), 1.0, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..3 {
            if let Some(b) = net.batchnorm_mut(l) {
                for r in 0..b.mean.len() {
                    b.mean[r] = rng.gen_range(-0.5..0.5);
                    b.var[r] = rng.gen_range(0.1..2.0);
                    b.gain[r] = rng.gen_range(-2.0..2.0);
                    b.bias[r] = rng.gen_range(-1.0..1.0);
                }
            }
        }
        net.fold_batchnorm().unwrap()
    }

    #[test]
    fn packed_path_matches_reference() {
        for seed in 0..10 {
            let net = folded(seed, seed % 3 != 0);
            let packed = PackedMLP::from_folded(&net).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
            let x = Array2::from_shape_fn((300, 12), |_| rng.gen_range(0.0..1.0));
            let a = net.forward(x.view()).unwrap();
            let b = packed.forward(x.view()).unwrap();
            assert_eq!(a.hidden, b.hidden);
            assert_eq!(a.logits, b.logits);
        }
    }

    #[test]
    fn unfolded_network_is_rejected() {
        let layers = vec![LayerSpec::sign(3, 2, 1, true), LayerSpec::count(2, 2, 1)];
        let net = QuantMLP::random(layers, sign_inputs(), 1.0, 0).unwrap();
        assert!(matches!(PackedMLP::from_folded(&net), Err(DnnError::NotFolded)));
    }

    #[test]
    fn bundle_round_trips() {
        let packed = PackedMLP::from_folded(&folded(4, true)).unwrap();
        let bytes = packed.to_bytes();
        assert_eq!(PackedMLP::from_bytes(&bytes).unwrap(), packed);
        assert!(PackedMLP::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(PackedMLP::from_bytes(&extra).is_err());
    }

    #[test]
    fn bundle_is_small_for_wide_binary_layers() {
        let layers = vec![LayerSpec::sign(1024, 512, 1, true), LayerSpec::count(512, 10, 1)];
        let net = QuantMLP::random(layers, sign_inputs(), 1.0, 9).unwrap().fold_batchnorm().unwrap();
        let bytes = PackedMLP::from_folded(&net).unwrap().to_bytes().len();
        assert!(bytes * 30 <= net.float32_bytes(), "{bytes} vs {}", net.float32_bytes());
    }
}
