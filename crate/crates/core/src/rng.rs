//! Counter-based random substreams.
//!
//! Every random decision in the samplers draws from a stream keyed by the
//! master seed, a purpose tag and a few indices, so results do not depend on
//! how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Derives the seed of the stream `(seed, tag, indices)`.
pub fn stream_seed(seed: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(tag_hash(tag)));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

pub fn substream(seed: u64, tag: &str, indices: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(stream_seed(seed, tag, indices))
}

/// Master seed plus a monotone counter of SMC steps.
#[derive(Debug, Clone)]
pub struct SeedSequence {
    seed: u64,
    step: u64,
}

impl SeedSequence {
    pub fn new(seed: u64) -> Self {
        Self { seed, step: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Returns the key of the next SMC step and advances the counter.
    pub fn next_step(&mut self) -> StepSeed {
        let s = StepSeed { seed: self.seed, step: self.step };
        self.step += 1;
        s
    }

    pub fn stream(&self, tag: &str, indices: &[u64]) -> StreamRng {
        substream(self.seed, tag, indices)
    }
}

/// Identifies one SMC step; particle streams are derived from it.
#[derive(Debug, Clone, Copy)]
pub struct StepSeed {
    pub seed: u64,
    pub step: u64,
}

impl StepSeed {
    pub fn stream(&self, tag: &str) -> StreamRng {
        substream(self.seed, tag, &[self.step])
    }

    pub fn particle_stream(&self, tag: &str, particle: usize) -> StreamRng {
        substream(self.seed, tag, &[self.step, particle as u64])
    }
}
