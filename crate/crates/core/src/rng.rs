//! Reproducible random streams.
//!
//! Every stochastic operation takes a [`SeedSpec`]. The pair
//! `(master_seed, stream_id)` selects a ChaCha8 key and stream, so distinct
//! streams never overlap and the same pair always reproduces the same bytes.
//! Batch operations derive one child stream per sample, which makes results
//! independent of how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifies one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeedSpec {
    pub const fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Child stream number `index`, e.g. one per sample in a batch.
    pub fn child(&self, index: u64) -> SeedSpec {
        let mixed = splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(0x6a09_e667_f3bc_c909)));
        SeedSpec::new(self.master_seed, mixed)
    }

    /// Child stream keyed by a phase name.
    pub fn derive(&self, label: &str) -> SeedSpec {
        // FNV-1a over the label
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.child(h)
    }
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec::new(0x4b41_4346, 0)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
