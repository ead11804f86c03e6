//! Classifier files and prediction tables.
//!
//! A classifier file is a short text manifest followed by the CPT payload:
//!
//! ```text
//! bnc 1
//! classes 10
//! cardinalities 4*168
//! parents -*168
//! representation fixed_point 6 0.0123
//! gamma 10
//! entries 6730
//! payload
//! <bytes>
//! ```
//!
//! Repeated list tokens are written as `token*count`. Fixed-point payloads
//! hold the code magnitudes and reduced-float payloads the exponent field and
//! fraction, both bit-packed least significant bit first. Real payloads are
//! little-endian `f64`.

use std::io::{Read, Write};

use crate::bitkernels::{pack_bits, unpack_bits};
use crate::manifest::{expand, run_length};

use super::classify::{BayesNetClassifier, Prediction, Scores};
use super::cpt::{CptLayout, CptSet, Representation};
use super::{BncError, Structure};

const MAGIC: &str = "bnc 1";

/// Writes the manifest and payload.
pub fn write_classifier<W: Write>(net: &BayesNetClassifier, mut w: W) -> Result<(), BncError> {
    let st = &net.structure;
    let cards: Vec<String> = st.cardinalities().iter().map(|c| c.to_string()).collect();
    let parents: Vec<String> = st.parents().iter().map(|p| p.map_or("-".to_string(), |p| p.to_string())).collect();
    let repr = match net.cpts.representation() {
        Representation::RealDouble => "real_double".to_string(),
        Representation::ReducedFloat {
            mantissa_bits,
            exponent_bits,
        } => format!("reduced_float {mantissa_bits} {exponent_bits}"),
        Representation::FixedPoint { bits, scale } => format!("fixed_point {bits} {scale:?}"),
    };
    let gamma = net.gamma.map_or("none".to_string(), |g| format!("{g:?}"));
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "classes {}", st.n_classes())?;
    writeln!(w, "cardinalities {}", run_length(&cards))?;
    writeln!(w, "parents {}", run_length(&parents))?;
    writeln!(w, "representation {repr}")?;
    writeln!(w, "gamma {gamma}")?;
    writeln!(w, "entries {}", net.cpts.layout().len())?;
    writeln!(w, "payload")?;
    let payload = match net.cpts.representation() {
        Representation::RealDouble => net.cpts.logs().iter().flat_map(|v| v.to_le_bytes()).collect(),
        Representation::FixedPoint { bits, .. } => pack_bits(net.cpts.codes().iter().map(|c| c.unsigned_abs()), bits),
        Representation::ReducedFloat {
            mantissa_bits,
            exponent_bits,
        } => pack_bits(net.cpts.codes().iter().map(|&c| c as u64), mantissa_bits + exponent_bits),
    };
    w.write_all(&payload)?;
    Ok(())
}

pub fn to_bytes(net: &BayesNetClassifier) -> Vec<u8> {
    let mut out = Vec::new();
    write_classifier(net, &mut out).expect("writing to memory cannot fail");
    out
}

fn field<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<Vec<&'a str>, BncError> {
    let line = lines.next().ok_or_else(|| BncError::Format(format!("missing {key} line")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(BncError::Format(format!("expected {key}, found {line:?}")));
    }
    Ok(parts.collect())
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T, BncError> {
    s.parse().map_err(|_| BncError::Format(format!("cannot parse {s:?}")))
}

/// Reads a classifier written by [`write_classifier`].
pub fn read_classifier<R: Read>(mut r: R) -> Result<BayesNetClassifier, BncError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

pub fn from_bytes(bytes: &[u8]) -> Result<BayesNetClassifier, BncError> {
    let marker = b"\npayload\n";
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| BncError::Format("no payload marker".into()))?;
    let head = std::str::from_utf8(&bytes[..split]).map_err(|_| BncError::Format("manifest is not UTF-8".into()))?;
    let payload = &bytes[split + marker.len()..];
    let mut lines = head.lines();
    if lines.next() != Some(MAGIC) {
        return Err(BncError::Format("not a classifier file".into()));
    }
    let classes: usize = parse(field(&mut lines, "classes")?.first().copied().unwrap_or(""))?;
    let cards = expand(&field(&mut lines, "cardinalities")?).map_err(BncError::Format)?
        .iter()
        .map(|s| parse(s))
        .collect::<Result<Vec<usize>, _>>()?;
    let parents = expand(&field(&mut lines, "parents")?).map_err(BncError::Format)?
        .iter()
        .map(|s| if s == "-" { Ok(None) } else { parse(s).map(Some) })
        .collect::<Result<Vec<Option<usize>>, _>>()?;
    let repr = field(&mut lines, "representation")?;
    let gamma = field(&mut lines, "gamma")?;
    let entries: usize = parse(field(&mut lines, "entries")?.first().copied().unwrap_or(""))?;
    if lines.next().is_some() {
        return Err(BncError::Format("unexpected manifest line".into()));
    }
    let structure = Structure::new(classes, cards, parents)?;
    let layout = CptLayout::new(&structure);
    if layout.len() != entries {
        return Err(BncError::Format(format!("{entries} entries declared, structure needs {}", layout.len())));
    }
    let cpts = match repr.as_slice() {
        ["real_double"] => {
            if payload.len() != entries * 8 {
                return Err(BncError::Format("real payload length".into()));
            }
            let logs = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            CptSet::from_logs(layout, logs)?
        }
        ["fixed_point", bits, scale] => {
            let (bits, scale): (u32, f64) = (parse(bits)?, parse(scale)?);
            if !(1..=31).contains(&bits) {
                return Err(BncError::Format("fixed-point width".into()));
            }
            let codes = unpack_bits(payload, bits, entries)?.into_iter().map(|m| -(m as i64)).collect();
            CptSet::from_codes(layout, Representation::FixedPoint { bits, scale }, codes)?
        }
        ["reduced_float", m, e] => {
            let (m, e): (u32, u32) = (parse(m)?, parse(e)?);
            if m + e > 63 || m == 0 || e == 0 {
                return Err(BncError::Format("reduced-float widths".into()));
            }
            let codes = unpack_bits(payload, m + e, entries)?.into_iter().map(|c| c as i64).collect();
            CptSet::from_codes(
                layout,
                Representation::ReducedFloat {
                    mantissa_bits: m,
                    exponent_bits: e,
                },
                codes,
            )?
        }
        _ => return Err(BncError::Format(format!("unknown representation {repr:?}"))),
    };
    let gamma = match gamma.as_slice() {
        ["none"] => None,
        [g] => Some(parse(g)?),
        _ => return Err(BncError::Format("gamma line".into())),
    };
    BayesNetClassifier::new(structure, cpts, gamma)
}

/// Writes `id,predicted,score_0,..` rows. Integer tables give integer scores.
pub fn write_predictions<W: Write>(preds: &[Prediction], n_classes: usize, w: W) -> Result<(), BncError> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string(), "predicted".to_string()];
    header.extend((0..n_classes).map(|c| format!("score_{c}")));
    wr.write_record(&header)?;
    for (id, p) in preds.iter().enumerate() {
        let mut rec = vec![id.to_string(), p.class.to_string()];
        match &p.scores {
            Scores::Integer { codes, .. } => rec.extend(codes.iter().map(|c| c.to_string())),
            Scores::Real(v) => rec.extend(v.iter().map(|s| format!("{s:.6}"))),
        }
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnc::{learn_ml, learn_structure_nb, quantize_fixed, quantize_float};
    use crate::data::DiscreteDataset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trained(parents: Vec<Option<usize>>) -> (DiscreteDataset, BayesNetClassifier) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = parents.len();
        let f: Vec<u8> = (0..300 * l).map(|_| rng.gen_range(0..3)).collect();
        let y: Vec<usize> = (0..300).map(|n| (f[n * l] as usize + rng.gen_range(0..2)) % 3).collect();
        let d = DiscreteDataset::new(f, vec![3; l], y, 3).unwrap();
        let s = Structure::new(3, vec![3; l], parents).unwrap();
        let ml = learn_ml(&d, &s, 1.0).unwrap();
        (d, BayesNetClassifier::new(s, ml, Some(5.0)).unwrap())
    }

    #[test]
    fn run_length_round_trip() {
        let toks: Vec<String> = ["4", "4", "4", "-", "0", "0"].iter().map(|s| s.to_string()).collect();
        let s = run_length(&toks);
        assert_eq!(s, "4*3 - 0*2");
        let fields: Vec<&str> = s.split_whitespace().collect();
        assert_eq!(expand(&fields).unwrap(), toks);
    }

    #[test]
    fn every_representation_round_trips() {
        let (d, net) = trained(vec![None, Some(0), Some(0), Some(2)]);
        let variants = [
            net.clone(),
            BayesNetClassifier::new(net.structure.clone(), quantize_fixed(&net.cpts, 6).unwrap(), None).unwrap(),
            BayesNetClassifier::new(net.structure.clone(), quantize_float(&net.cpts, 4, 5).unwrap(), Some(2.0))
                .unwrap(),
        ];
        for v in variants {
            let back = from_bytes(&to_bytes(&v)).unwrap();
            assert_eq!(back, v);
            assert_eq!(back.predict(&d).unwrap(), v.predict(&d).unwrap());
        }
    }

    #[test]
    fn fixed_payload_is_dense() {
        let s = learn_structure_nb(10, &[4; 168]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f: Vec<u8> = (0..50 * 168).map(|_| rng.gen_range(0..4)).collect();
        let d = DiscreteDataset::new(f, vec![4; 168], (0..50).map(|n| n % 10).collect(), 10).unwrap();
        let q = quantize_fixed(&learn_ml(&d, &s, 1.0).unwrap(), 6).unwrap();
        let net = BayesNetClassifier::new(s, q, Some(10.0)).unwrap();
        let bytes = to_bytes(&net);
        let payload = (6730 * 6usize).div_ceil(8);
        assert!(bytes.len() - payload < 200);
        assert!(bytes.len() * 8 <= 48_000);
    }

    #[test]
    fn rejects_corruption() {
        let (_, net) = trained(vec![None, None]);
        let bytes = to_bytes(&quantize_to_fixed(&net));
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'x';
        assert!(from_bytes(&bad).is_err());
        let text = String::from_utf8_lossy(&bytes).replace("entries", "entry");
        assert!(from_bytes(text.as_bytes()).is_err());
    }

    fn quantize_to_fixed(net: &BayesNetClassifier) -> BayesNetClassifier {
        BayesNetClassifier::new(net.structure.clone(), quantize_fixed(&net.cpts, 5).unwrap(), None).unwrap()
    }

    #[test]
    fn prediction_csv_has_integer_scores() {
        let (d, net) = trained(vec![None, None]);
        let q = quantize_to_fixed(&net);
        let preds = q.predict(&d.subset(&[0, 1])).unwrap();
        let mut out = Vec::new();
        write_predictions(&preds, 3, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("id,predicted,score_0,score_1,score_2"));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 5);
        assert!(first[2..].iter().all(|s| s.parse::<i64>().is_ok()));
    }
}
