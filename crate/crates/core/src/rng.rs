//! Seeded random substreams.
//!
//! Every consumer of randomness derives its own ChaCha stream from a
//! `(seed, domain, index)` triple, so generation order never changes the
//! values drawn for a given line or coil.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domains keep unrelated consumers on disjoint streams even when they share
/// a seed and an index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Broadband = 1,
    LinePhase = 2,
    Thermal = 3,
    WeightInit = 4,
    Shuffle = 5,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mix two words into one; used for deriving child seeds.
pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

pub fn substream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, domain as u64));
    rng.set_stream(index);
    rng
}

/// 64-bit FNV-1a, used for scan identifiers.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
