//! Reproducible random streams.
//!
//! Every simulated dataset draws from its own ChaCha8 stream. The 256-bit key of
//! that stream is a pure function of `(master seed, setting id, replicate index)`,
//! so a replicate's data never depend on which thread ran it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for all simulation.
pub type SimRng = ChaCha8Rng;

/// SplitMix64 finalizer: a bijective avalanche mix of one 64-bit word.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the bytes of a label. Stable across platforms and releases.
pub fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// 64-bit seed for replicate `rep` of the setting labelled `setting_id`.
pub fn replicate_seed(master_seed: u64, setting_id: &str, rep: u64) -> u64 {
    let a = mix64(master_seed);
    let b = mix64(a ^ label_hash(setting_id));
    mix64(b ^ mix64(rep.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// Expands a 64-bit seed into a full ChaCha key.
pub fn stream(seed: u64) -> SimRng {
    let mut key = [0u8; 32];
    let mut w = seed;
    for chunk in key.chunks_exact_mut(8) {
        w = mix64(w);
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
