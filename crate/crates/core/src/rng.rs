//! Reproducible random streams.
//!
//! Every draw in the crate comes from a ChaCha stream addressed by
//! `(seed, replication, tag)`. ChaCha is counter based, so the stream for a
//! replication never depends on how many other replications ran before it
//! or on which worker thread ran it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for independent streams within one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamTag {
    Covariates = 1,
    Treatment = 2,
    OutcomeNoise = 3,
    FoldSplit = 4,
    Baseline = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub replication: u64,
}

impl StreamKey {
    pub fn new(seed: u64, replication: u64) -> Self {
        Self { seed, replication }
    }

    pub fn rng(&self, tag: StreamTag) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, self.replication));
        rng.set_stream(tag as u64);
        rng
    }
}

/// Derive a child seed, e.g. per scenario from a master seed.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    mix(parent ^ 0xA076_1D64_78BD_642F, index)
}

fn mix(a: u64, b: u64) -> u64 {
    splitmix(splitmix(a) ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
