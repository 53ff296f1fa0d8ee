//! Named random streams derived from one master seed.
//!
//! Each consumer draws from its own ChaCha stream, so turning a feature on or
//! off (augmentation, say) never shifts the numbers another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Split = 2,
    Init = 3,
    Augment = 4,
    Shuffle = 5,
    Noise = 6,
}

pub fn stream(seed: u64, which: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
