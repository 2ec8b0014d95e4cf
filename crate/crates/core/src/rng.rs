//! Deterministic seeding.
//!
//! A run has a single top-level seed; every stage that draws random numbers
//! derives its own stream from it so that changing one stage never perturbs
//! another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Sampling,
    Noise,
    FieldInit,
    Queries,
    Batches,
    MetricSampling,
}

impl Stage {
    fn tag(self) -> u64 {
        match self {
            Stage::Sampling => 0x5341_4d50,
            Stage::Noise => 0x4e4f_4953,
            Stage::FieldInit => 0x494e_4954,
            Stage::Queries => 0x5155_4552,
            Stage::Batches => 0x4241_5443,
            Stage::MetricSampling => 0x4d45_5452,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stage_seed(seed: u64, stage: Stage) -> u64 {
    splitmix64(splitmix64(seed) ^ stage.tag())
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
