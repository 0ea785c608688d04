//! Deterministic random streams.
//!
//! Every parallel work item gets its own generator derived from
//! `(seed, stream, iteration, item)`, so results do not depend on how rayon
//! schedules the work.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

/// Stream tags keep the phases of one iteration statistically independent.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    RefineHd = 2,
    RefineLd = 3,
    Forces = 4,
    Schedule = 5,
    Insert = 6,
    Nnd = 7,
    Metrics = 8,
    Fuzz = 9,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, stream: Stream, iteration: u64, item: u64) -> Rng {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ stream as u64);
    h = splitmix64(h ^ iteration);
    h = splitmix64(h ^ item);
    Rng::seed_from_u64(h)
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
