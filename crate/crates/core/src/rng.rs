//! Seed derivation.
//!
//! Every random quantity comes from its own ChaCha8 stream. A stream seed is
//! a SplitMix64 fold of the master seed with a stream tag and any number of
//! integer coordinates (cell index, replicate index, ...), so a run can be
//! split across workers in any order and still draw the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Logical streams drawn from a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Predictors = 1,
    Noise = 2,
    Partition = 3,
    Bandwidth = 4,
    Lambda = 5,
    TestGrid = 6,
    Split = 7,
    Replicate = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `master`, a stream tag and coordinates.
pub fn derive_seed(master: u64, stream: Stream, coords: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ splitmix64(stream as u64));
    for &c in coords {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(master: u64, stream: Stream, coords: &[u64]) -> ChaCha8Rng {
    rng_from_seed(derive_seed(master, stream, coords))
}
