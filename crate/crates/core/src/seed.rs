/// SplitMix64 finalizer: derives independent child seeds from a parent seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic value in `[-1, 1)` for a `(seed, stream)` pair.
pub fn signed_unit(seed: u64, stream: u64) -> f64 {
    (mix_seed(seed, stream) >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}
