//! Seeded random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream keyed by the run
//! seed, a purpose tag and an index, so generation can be split or
//! reordered without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for [`stream`].
pub mod purpose {
    pub const GLYPHS: u64 = 1;
    pub const CORPUS: u64 = 2;
    pub const SURROGATE_INIT: u64 = 3;
    pub const RECOGNIZER_INIT: u64 = 4;
    pub const BATCHES: u64 = 5;
    pub const PAIRS: u64 = 6;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(purpose)));
    rng.set_stream(index);
    rng
}
