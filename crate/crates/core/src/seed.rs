//! Root seed splitting. Each purpose draws from its own ChaCha stream so
//! adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Data,
    Init,
    Dropout,
    Baseline,
    Shuffle,
    Calibration,
}

impl Purpose {
    fn stream(self) -> u64 {
        match self {
            Self::Data => 1,
            Self::Init => 2,
            Self::Dropout => 3,
            Self::Baseline => 4,
            Self::Shuffle => 5,
            Self::Calibration => 6,
        }
    }
}

pub fn rng_for(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose.stream());
    rng
}

/// Independent generator for item `index` under `purpose` (e.g. one movie).
pub fn rng_for_item(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(purpose.stream());
    rng
}
