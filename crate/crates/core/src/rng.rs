//! Seed-derived random streams. Each consumer gets its own ChaCha stream so
//! that, e.g., the shuffle for epoch 7 does not depend on how many numbers
//! model initialization drew.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ModelInit = 1,
    SelectionInit = 2,
    TrainShuffle = 3,
    ValShuffle = 4,
    Split = 5,
    SynthTables = 6,
    SynthSamples = 7,
}

pub fn stream(seed: u64, which: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((which as u64) << 48) | (index & 0xffff_ffff_ffff));
    rng
}
