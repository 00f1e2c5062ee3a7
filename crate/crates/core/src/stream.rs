//! Counter-based random streams.
//!
//! A [`SeededStream`] is a value: `(seed, replicate)` fixes a ChaCha key, and
//! each consumer lane (a matrix row, a bootstrap resample, ...) selects a
//! ChaCha stream id. Output therefore depends only on the coordinates that
//! are asked for, never on execution order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeededStream {
    pub seed: u64,
    pub replicate: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededStream {
    pub fn new(seed: u64) -> Self {
        SeededStream { seed, replicate: 0 }
    }

    pub fn with_replicate(self, replicate: u64) -> Self {
        SeededStream { replicate, ..self }
    }

    /// Independent child stream for a named purpose. Children of distinct
    /// tags (or of distinct parents) do not share keys.
    pub fn fork(self, tag: u64) -> Self {
        let mixed = splitmix64(self.seed ^ splitmix64(self.replicate ^ splitmix64(tag ^ 0xA5A5)));
        SeededStream {
            seed: mixed,
            replicate: 0,
        }
    }

    /// Generator for one lane of this stream.
    pub fn rng(&self, lane: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.replicate.to_le_bytes());
        key[16..24].copy_from_slice(&splitmix64(self.seed).to_le_bytes());
        key[24..].copy_from_slice(&splitmix64(self.replicate.wrapping_add(1)).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(lane);
        rng
    }
}
