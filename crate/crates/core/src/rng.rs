//! Seeded random streams.
//!
//! Every random quantity in a run is drawn from a stream identified by the
//! master seed plus a short path of integer labels (observation index,
//! particle index, ...). Streams are independent of thread scheduling, so
//! parallel and sequential execution produce bit-identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Labels for the top-level stream families.
pub mod tag {
    pub const INIT: u64 = 0x1;
    pub const PROPAGATE: u64 = 0x2;
    pub const RESAMPLE: u64 = 0x3;
    pub const TRAIN: u64 = 0x4;
    pub const SIMULATE: u64 = 0x5;
    pub const RESERVOIR: u64 = 0x6;
    pub const NETWORK_INIT: u64 = 0x7;
    pub const REPETITION: u64 = 0x8;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a label path.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

pub fn stream(master: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, path))
}
