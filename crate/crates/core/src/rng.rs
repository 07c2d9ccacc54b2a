//! Seeded random streams. Each consumer draws from its own ChaCha stream so
//! that adding draws in one place never shifts the numbers seen elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Reset = 2,
    BehaviorNoise = 3,
    Minibatch = 4,
    Latent = 5,
    TargetNoise = 6,
    Dropout = 7,
    Evaluation = 8,
    Exploration = 9,
    Analysis = 10,
    Episode = 11,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
