//! Counter-based random streams.
//!
//! Every particle draws from its own ChaCha8 stream addressed by
//! (master seed, step, source class, particle index), so results do not
//! depend on how particles are distributed over threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Source classes used as part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum StreamClass {
    Census = 0,
    Boundary = 1,
    GhostCensus = 2,
    GhostBoundary = 3,
    Emission = 4,
    Roulette = 5,
    Initial = 6,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    base: ChaCha8Rng,
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { base: ChaCha8Rng::seed_from_u64(seed), seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for one particle.
    pub fn particle(&self, step: u64, class: StreamClass, index: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream((step << 8) | class as u64);
        rng.set_word_pos((index as u128) << 36);
        rng
    }

    /// Generator for the in-flight draws of a particle, disjoint from the
    /// one that sampled it.
    pub fn tracking(&self, step: u64, class: StreamClass, index: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream((step << 8) | TRACKING_BIT | class as u64);
        rng.set_word_pos((index as u128) << 36);
        rng
    }

    /// Generator for draws shared by all particles of one source bucket.
    pub fn bucket(&self, step: u64, class: StreamClass, bucket: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream((step << 8) | BUCKET_BIT | class as u64);
        rng.set_word_pos((bucket as u128) << 36);
        rng
    }
}

const TRACKING_BIT: u64 = 0x80;
const BUCKET_BIT: u64 = 0x40;
