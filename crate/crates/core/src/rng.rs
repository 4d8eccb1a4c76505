//! Counter-based seed derivation.
//!
//! Every random draw in the crate comes from a [`StreamRng`] seeded by
//! [`derive_seed`] applied to a master seed and a path of counters
//! (purpose tag, unit, replicate, ...). Streams therefore never depend on
//! the order in which parallel work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Human-readable description of the derivation, stored in provenance records.
pub const SEED_SCHEME: &str = "chacha8(splitmix64-chain(master, path))";

/// Purpose tags, always the first element of a derivation path.
pub mod tag {
    pub const SIEVE: u64 = 1;
    pub const BOOTSTRAP: u64 = 2;
    pub const DGP: u64 = 3;
    pub const EXPERIMENT: u64 = 4;
    pub const TEST: u64 = 5;
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `path` into `master`, one counter at a time. Order matters.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn stream(master: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, path))
}
