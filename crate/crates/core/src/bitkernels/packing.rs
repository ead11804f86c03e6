use super::KernelError;

/// Concatenates the low `bits` bits of each value, least significant bit
/// first, into bytes.
pub fn pack_bits(values: impl IntoIterator<Item = u64>, bits: u32) -> Vec<u8> {
    assert!((1..=64).contains(&bits), "bit width must be in 1..=64");
    let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
    let mut out = Vec::new();
    let (mut acc, mut filled) = (0u128, 0u32);
    for v in values {
        acc |= u128::from(v & mask) << filled;
        filled += bits;
        while filled >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            filled -= 8;
        }
    }
    if filled > 0 {
        out.push(acc as u8);
    }
    out
}

/// Inverse of [`pack_bits`]. The byte count must match `count` exactly.
pub fn unpack_bits(bytes: &[u8], bits: u32, count: usize) -> Result<Vec<u64>, KernelError> {
    if !(1..=64).contains(&bits) {
        return Err(KernelError::InvalidSpec("bit width must be in 1..=64"));
    }
    if bytes.len() != (count * bits as usize).div_ceil(8) {
        return Err(KernelError::Corrupt("packed length does not match the code count"));
    }
    let mask = if bits == 64 { u128::from(u64::MAX) } else { (1u128 << bits) - 1 };
    let mut out = Vec::with_capacity(count);
    let (mut acc, mut filled) = (0u128, 0u32);
    let mut it = bytes.iter();
    for _ in 0..count {
        while filled < bits {
            acc |= u128::from(*it.next().expect("length checked")) << filled;
            filled += 8;
        }
        out.push((acc & mask) as u64);
        acc >>= bits;
        filled -= bits;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_all_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for bits in 1..=64u32 {
            let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
            let vals: Vec<u64> = (0..77).map(|_| rng.gen::<u64>() & mask).collect();
            let packed = pack_bits(vals.iter().copied(), bits);
            assert_eq!(packed.len(), (77 * bits as usize).div_ceil(8));
            assert_eq!(unpack_bits(&packed, bits, 77).unwrap(), vals);
        }
    }

    #[test]
    fn lsb_first_layout() {
        assert_eq!(pack_bits([1, 0, 1, 1], 1), vec![0b1101]);
        assert_eq!(pack_bits([0b101, 0b011], 3), vec![0b011101]);
        assert!(unpack_bits(&[0, 0], 3, 1).is_err());
    }
}
