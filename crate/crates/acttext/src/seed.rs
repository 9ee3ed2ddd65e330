//! Seed derivation shared by every module that needs per-item determinism.

/// Mix a base seed with a stream index into an independent child seed.
///
/// SplitMix64 finalizer over the xor of base and index. Used everywhere a
/// master seed fans out into per-episode, per-sample, or per-attempt seeds,
/// so that item `k` is reproducible without generating items `0..k`.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
