//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream derived from
//! a user seed, so changing e.g. the number of epochs never perturbs the
//! initialization or the posterior draws.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Named substreams. The discriminant is the ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Split = 3,
    Posterior = 4,
    MmdShuffle = 5,
    TaskSplit = 6,
    SyntheticSource = 7,
    SyntheticTarget = 8,
    SyntheticOracle = 9,
}

/// Deterministic generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Mix several integers into one seed (splitmix64 finalizer).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = splitmix(h);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
