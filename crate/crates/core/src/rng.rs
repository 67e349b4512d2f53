//! Deterministic RNG substreams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by a
//! hash of `(seed, domain, a, b, c)`, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep substreams for different purposes disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Concepts = 1,
    Sample = 2,
    Init = 3,
    Shuffle = 4,
    Keywords = 5,
    Gradcheck = 6,
    Theorem = 7,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn substream_key(seed: u64, domain: Domain, a: u64, b: u64, c: u64) -> u64 {
    [domain as u64, a, b, c]
        .iter()
        .fold(splitmix(seed), |h, &x| splitmix(h ^ splitmix(x)))
}

pub fn substream(seed: u64, domain: Domain, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_key(seed, domain, a, b, c))
}
