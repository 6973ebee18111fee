//! Deterministic seed derivation.
//!
//! Every random draw in the crate comes from a stream keyed by a root seed, a
//! purpose tag, and the indices of the entity being drawn for (edge, link,
//! iteration, trial). Streams are independent of evaluation order, so
//! parallel and sequential execution, and re-generation after topology
//! changes, all produce identical values for surviving entities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep unrelated streams disjoint even when entity ids collide.
pub mod tag {
    pub const PLACEMENT: u64 = 0x11;
    pub const EDGE_NOISE: u64 = 0x22;
    pub const TRUTH: u64 = 0x33;
    pub const MEASUREMENT: u64 = 0x44;
    pub const DELIVERY: u64 = 0x55;
    pub const TREE: u64 = 0x66;
    pub const GRAPH: u64 = 0x77;
    pub const SCHEDULE: u64 = 0x88;
    pub const INIT: u64 = 0x99;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a root seed with a key sequence into one well-spread value.
pub fn mix(root: u64, keys: &[u64]) -> u64 {
    let mut state = splitmix64(root);
    for &k in keys {
        state = splitmix64(state ^ k.wrapping_mul(GOLDEN));
    }
    state
}

/// A ChaCha stream for the given `(root, keys)` identity.
pub fn stream(root: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(root, keys))
}

/// FNV-1a over bytes. Used for content digests that must be stable across
/// platforms and builds (std's `Hasher` is neither).
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}
