//! Counter-based seed derivation. Every random stream is a pure function of
//! `(master seed, index, purpose)`, so results do not depend on the order in
//! which replications, splits or folds are executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Covariates = 1,
    Treatment = 2,
    Error = 3,
    Partition = 4,
    AipwPartition = 5,
    Rerun = 6,
    Replication = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `index` of the given purpose under `master`.
pub fn derive(master: u64, index: u64, purpose: Purpose) -> u64 {
    let a = splitmix64(master ^ 0x5354_4D4C_4531_u64);
    let b = splitmix64(a ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    splitmix64(b ^ (purpose as u64).wrapping_mul(0x8CB9_2BA7_2F3D_8DD7))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
