//! Seed derivation. Every random draw in the pipeline comes from a ChaCha
//! stream keyed by a base seed mixed with a purpose tag and indices, so that
//! independent components never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Derive a sub-seed from a base seed, a purpose tag and a list of indices.
pub fn derive(seed: u64, tag: &str, idx: &[u64]) -> u64 {
    let mut h = mix64(seed ^ tag_hash(tag));
    for &i in idx {
        h = mix64(h ^ mix64(i.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    h
}

pub fn rng(seed: u64, tag: &str, idx: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag, idx))
}
