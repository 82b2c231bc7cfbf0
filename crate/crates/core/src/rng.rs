//! Seeded random streams.
//!
//! Every trajectory, prefix sample and Monte-Carlo shard draws from its own
//! ChaCha stream, addressed by `(seed, domain, index)`. Streams never overlap,
//! so work can be split across threads without changing any result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Purpose of a random stream. Keeps e.g. trace and prefix draws disjoint
/// even when they share a seed and an index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Trajectory = 1,
    SteadyTrace = 2,
    InitialPrefix = 3,
    TvSamples = 4,
    NormSamples = 5,
    Rotation = 6,
    Spectral = 7,
    PathSamples = 8,
}

/// Returns the generator for stream `index` of `domain` under `seed`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> SimRng {
    assert!(index < 1 << 48, "stream index too large");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 48) | index);
    rng
}
