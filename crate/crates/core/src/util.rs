//! Small deterministic helpers shared across modules.

/// FNV-1a 64-bit hash. Used for model identifiers and stream checksums;
/// not cryptographic.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 step, for deriving independent seeds from a base seed.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the RNG stream of one patch, derived from the run seed and the
/// patch's linear index so patches can be processed in any order.
pub fn patch_stream_seed(base: u64, patch_linear_index: usize) -> u64 {
    splitmix64(base ^ (patch_linear_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}
