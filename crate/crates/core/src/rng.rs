//! Deterministic random streams.
//!
//! Every stochastic component (parameter init, epoch shuffling, dropout
//! masks, synthetic sampling) draws from its own named stream derived from
//! the single run seed. Streams are independent of evaluation order, so
//! changing how work is scheduled never changes the numbers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a label and index path into a root seed (FNV-1a over the label
/// bytes and the little-endian index words, then a splitmix finalizer).
pub fn derive_seed(root: u64, label: &str, indices: &[u64]) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET ^ root;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    for ix in indices {
        for b in ix.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    // splitmix64 finalizer spreads low-entropy inputs across all bits
    h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A seeded generator for the named stream. The same `(root, label,
/// indices)` triple always yields an identical sequence.
pub fn stream(root: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label, indices))
}
