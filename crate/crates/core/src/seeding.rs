//! Deterministic seed derivation.

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into one seed. Order matters.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x05CA_1EB0_D6E7_u64, |acc, &p| mix64(acc ^ mix64(p)))
}

/// FNV-1a over the bytes of `s`.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01B3)
    })
}
