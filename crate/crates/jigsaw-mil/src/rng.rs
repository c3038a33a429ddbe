//! Seeded, counter-derived random streams.
//!
//! Every consumer of randomness gets its own PCG stream derived from the run
//! seed plus a tag path (purpose, epoch, bag index, ...). Results are then
//! independent of iteration order and thread count.

use rand::SeedableRng;

pub type Pcg = rand_pcg::Pcg64;

/// SplitMix64 finalizer; good avalanche for seed derivation.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A PCG stream keyed by `(seed, tags...)`.
pub fn stream(seed: u64, tags: &[u64]) -> Pcg {
    let mut s = splitmix64(seed ^ 0x6A09_E667_F3BC_C908);
    for &t in tags {
        s = splitmix64(s ^ splitmix64(t));
    }
    Pcg::seed_from_u64(s)
}

/// Purpose tags, kept in one place so streams never collide by accident.
pub mod tag {
    pub const PARAM_INIT: u64 = 1;
    pub const BAG_GEN: u64 = 2;
    pub const EPOCH_ORDER: u64 = 3;
    pub const STEP_PERM: u64 = 4;
    pub const VERIFY: u64 = 5;
}
