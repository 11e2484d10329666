//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`), keyed by
//! a 64-bit run seed and split into independent 64-bit stream ids. ChaCha is a
//! counter-mode generator, so a `(seed, purpose, index)` triple always yields
//! the same sequence no matter which worker draws it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// What a stream is used for. The discriminant occupies the upper 16 bits of
/// the ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Purpose {
    Scenario = 1,
    Push = 2,
    Init = 3,
    Batch = 4,
    Explore = 5,
    Dataset = 6,
    Eval = 7,
    Policy = 8,
}

/// Independent generator for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) ^ (index & 0x0000_ffff_ffff_ffff));
    rng
}
