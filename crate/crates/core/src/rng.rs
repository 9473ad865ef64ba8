//! Counter-based derivation of independent random streams.
//!
//! Every consumer of randomness asks for a stream keyed by the run seed plus
//! a small tuple of tags (purpose, epoch, step, ...). Streams never share
//! state, so the order in which they are created does not matter and any
//! step can be replayed in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub mod purpose {
    pub const DATASET: u64 = 1;
    pub const INIT: u64 = 2;
    pub const BANK: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const VIEWS: u64 = 5;
    pub const NEGATIVES: u64 = 6;
    pub const KMEANS: u64 = 7;
    pub const PROBE: u64 = 8;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    let key = tags
        .iter()
        .fold(splitmix(seed), |acc, &t| splitmix(acc ^ splitmix(t)));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(tags.first().copied().unwrap_or(0));
    rng
}
