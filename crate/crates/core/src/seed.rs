//! Seed derivation.
//!
//! Every random stream in the crate descends from one root seed. A child seed
//! is `splitmix64(root ^ fnv1a(tag) ^ splitmix64(index))`, so streams for
//! different components (`tag`) and different replicas (`index`) never share
//! state while staying a pure function of the root.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derives a child seed for component `tag`, replica `index`.
pub fn derive(root: u64, tag: &str, index: u64) -> u64 {
    splitmix64(root ^ fnv1a(tag) ^ splitmix64(index))
}

/// A ChaCha8 stream for `(root, tag, index)`.
pub fn stream(root: u64, tag: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive(root, tag, index))
}
