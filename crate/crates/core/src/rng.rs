//! Reproducible random streams keyed by `(master_seed, stream_id)`.
//!
//! Each stream is a ChaCha8 generator seeded from the master seed with the
//! stream id selecting one of its 2^64 independent streams, so replications
//! can be generated in any order or in parallel without coupling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mixes a 64-bit word (SplitMix64 finalizer).
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a sequence of identifiers into one stream id.
pub fn stream_id(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5EED_u64, |acc, &p| mix64(acc ^ mix64(p)))
}

/// Well-known stream roles used when one replication needs several
/// independent sources of randomness.
pub mod role {
    pub const EXPERIMENTAL: u64 = 1;
    pub const OBSERVATIONAL: u64 = 2;
    pub const FOLDS: u64 = 3;
    pub const CATE_FOLDS: u64 = 4;
    pub const NESTED: u64 = 5;
}

#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        Self {
            master_seed,
            stream_id,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream under the same master seed, derived from this stream's
    /// id and `tag`. Does not consume randomness from `self`.
    pub fn child(&self, tag: u64) -> RngStream {
        RngStream::new(self.master_seed, stream_id(&[self.stream_id, tag]))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
