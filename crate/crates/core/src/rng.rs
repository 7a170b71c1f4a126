//! Counter-based random streams.
//!
//! Every consumer of randomness asks the policy for a stream keyed by a
//! purpose tag and a path index. ChaCha is a counter-mode generator, so the
//! stream for `(seed, tag, path)` is a pure function of those three values and
//! does not depend on which worker draws it or in what order paths are run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type PathRng = ChaCha8Rng;

/// What a stream is used for. Distinct tags give independent streams for the
/// same path index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamTag {
    /// Brownian increments of the base path grid.
    Path,
    /// Intra-step bridge draws of the crossing sampler for one threshold level.
    Crossing(u64),
    /// Bridge insertions at observation or alignment knots.
    Refinement,
    /// Anything else a caller needs, keyed by an arbitrary label.
    Custom(u64),
}

impl StreamTag {
    fn key(self) -> u64 {
        match self {
            StreamTag::Path => 0x5041_5448,
            StreamTag::Crossing(k) => splitmix64(0x4352_4f53 ^ splitmix64(k)),
            StreamTag::Refinement => 0x5245_4649,
            StreamTag::Custom(k) => splitmix64(0x4355_5354 ^ splitmix64(k.rotate_left(17))),
        }
    }

    /// Crossing stream for a threshold, keyed by its bit pattern so the stream
    /// does not depend on the position of the threshold inside a ladder.
    pub fn crossing_for(eta: f64) -> Self {
        StreamTag::Crossing(eta.to_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngPolicy {
    pub master_seed: u64,
}

impl RngPolicy {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn stream(&self, tag: StreamTag, path_index: u64) -> PathRng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.master_seed ^ tag.key()));
        rng.set_stream(path_index);
        rng
    }
}

/// SplitMix64 finaliser, used only to spread seeds and tags over 64 bits.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw on the open interval (0, 1).
#[inline]
pub fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}
