//! Deterministic seed derivation.
//!
//! All randomness in the pipeline flows from one global seed through named
//! sub-streams. Each (seed, labels) pair maps to an independent RNG, so adding
//! a stage or reordering work never perturbs another stage's draws, and any
//! single unit of work (one passage, one query, one epoch) can be reproduced
//! in isolation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over a byte slice. Fixed so artifacts are portable across
/// platforms and toolchain versions.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hash a global seed together with a list of stream labels into one u64.
///
/// Labels are separated by a byte that cannot occur in UTF-8 text, so
/// `["ab", "c"]` and `["a", "bc"]` map to different streams.
pub fn sub_seed(seed: u64, labels: &[&str]) -> u64 {
    let mut h = fnv1a64(&seed.to_le_bytes());
    for label in labels {
        h ^= 0xff;
        h = h.wrapping_mul(FNV_PRIME);
        for &b in label.as_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

/// Named RNG sub-stream for a global seed.
pub fn substream(seed: u64, labels: &[&str]) -> ChaCha8Rng {
    rng_from_u64(sub_seed(seed, labels))
}

/// Expand a 64-bit seed into a full ChaCha key by chained FNV-1a, avoiding
/// any dependency on the rand crate's seed-expansion details.
pub fn rng_from_u64(seed: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut x = seed;
    for chunk in key.chunks_mut(8) {
        x = fnv1a64(&x.to_le_bytes());
        chunk.copy_from_slice(&x.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
