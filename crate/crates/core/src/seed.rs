//! Seed plumbing. Every stochastic component draws from a ChaCha stream whose
//! seed is derived from a user-supplied root seed and a stable label, so
//! independent jobs (trees, folds, permutations) never share a stream and
//! never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `root` for the stream identified by `label` and `index`.
// Inlining this into loops with constant labels sends LLVM into very long
// optimization times.
#[inline(never)]
pub fn derive(root: u64, label: &str, index: u64) -> u64 {
    let mut h = mix(root);
    for b in label.bytes() {
        h = mix(h ^ u64::from(b));
    }
    mix(h ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(root: u64, label: &str, index: u64) -> Rng {
    rng(derive(root, label, index))
}
