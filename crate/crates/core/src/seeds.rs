//! Deterministic seed derivation.
//!
//! Every source of randomness in an experiment (offline data noise, online
//! measurement noise, input disturbances, excitation signals) draws from its
//! own stream derived from a single root seed, so distinct streams never
//! alias and runs are reproducible bit for bit.

/// Derives a child seed from a root seed and a stream label.
///
/// FNV-1a over the label, folded into the root with a splitmix64 finalizer.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(root ^ h)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
