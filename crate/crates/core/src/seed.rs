//! Named random sub-streams.
//!
//! Every random choice in the toolkit is drawn from a ChaCha stream whose
//! 64-bit seed is derived from the user seed and a path of labels, e.g.
//! `derive(seed, &["folds", "site", "3"])`. Derivation folds each label
//! through FNV-1a and mixes the running state with SplitMix64, so streams
//! are stable across platforms, thread schedules and crate versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A seed plus a label path. Cheap to clone and extend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    state: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream {
            state: splitmix64(seed),
        }
    }

    /// Child stream for a string label.
    pub fn child(&self, label: &str) -> Self {
        let mut h = FNV_OFFSET;
        for b in label.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        SeedStream {
            state: splitmix64(self.state ^ h),
        }
    }

    /// Child stream for an integer index.
    pub fn index(&self, i: u64) -> Self {
        SeedStream {
            state: splitmix64(self.state.rotate_left(17) ^ splitmix64(i.wrapping_add(1))),
        }
    }

    pub fn seed(&self) -> u64 {
        self.state
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.state)
    }
}
