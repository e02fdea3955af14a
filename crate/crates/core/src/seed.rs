//! Counter-based seed derivation.
//!
//! Every random stream in an experiment is derived from one master seed and a
//! `(label, counter)` pair. The label is hashed with FNV-1a and mixed with the
//! master seed and counter through SplitMix64 finalizers, so adding a new
//! consumer under a fresh label never shifts the streams of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used for every stochastic draw in this crate.
pub type Rng = ChaCha8Rng;

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a sub-seed for `(label, counter)` from `master`.
pub fn derive(master: u64, label: &str, counter: u64) -> u64 {
    splitmix(splitmix(master ^ fnv1a(label)).wrapping_add(splitmix(counter)))
}

/// Builds an RNG for `(label, counter)` under `master`.
pub fn rng(master: u64, label: &str, counter: u64) -> Rng {
    Rng::seed_from_u64(derive(master, label, counter))
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
