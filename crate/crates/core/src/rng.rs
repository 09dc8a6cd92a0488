//! Counter-based, splittable random streams.
//!
//! Every random decision in the pipeline is drawn from a stream addressed by a
//! key path such as `(root seed, MASK, step, sequence index)`. A key is forked
//! by mixing a label into it; the resulting 256-bit value seeds a ChaCha8
//! generator whose output depends only on the key and its internal counter.
//! Batches can therefore be prepared in any order, on any number of workers,
//! and still produce identical data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels used across the crate. Values are frozen: changing one
/// changes every derived stream.
pub mod domain {
    pub const INIT: u64 = 0x494e_4954;
    pub const CORPUS: u64 = 0x434f_5250;
    pub const WINDOW: u64 = 0x5749_4e44;
    pub const BATCH: u64 = 0x4241_5443;
    pub const MASK: u64 = 0x4d41_534b;
    pub const CORRUPT: u64 = 0x434f_5252;
    pub const DROPOUT: u64 = 0x4452_4f50;
    pub const EVAL: u64 = 0x4556_414c;
    pub const FINETUNE: u64 = 0x4649_4e45;
    pub const STATS: u64 = 0x5354_4154;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Address of one random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngKey(u64);

impl RngKey {
    pub fn new(seed: u64) -> Self {
        RngKey(splitmix64(seed))
    }

    /// Child key for `label`. Forking is not commutative:
    /// `k.fork(a).fork(b) != k.fork(b).fork(a)` in general.
    pub fn fork(self, label: u64) -> Self {
        RngKey(splitmix64(self.0 ^ splitmix64(label.wrapping_mul(GOLDEN) ^ 0x5DEE_CE66_D1CE_5EED)))
    }

    pub fn fork2(self, a: u64, b: u64) -> Self {
        self.fork(a).fork(b)
    }

    pub fn fork3(self, a: u64, b: u64, c: u64) -> Self {
        self.fork(a).fork(b).fork(c)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// Generator positioned at counter zero of this stream.
    pub fn rng(self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let mut state = self.0;
        for chunk in seed.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
