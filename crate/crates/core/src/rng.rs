//! Counter-based random streams.
//!
//! A stream is addressed by `(master seed, domain, index)`. The seed and
//! domain select a ChaCha key; the index selects the ChaCha stream, so any
//! realization can be regenerated independently of how work was scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domains keep different consumers of one master seed apart.
pub mod domain {
    pub const LAYOUT_BULK: u64 = 1;
    pub const LAYOUT_SURFACE: u64 = 2;
    pub const CHARGE_CONFIG: u64 = 3;
    pub const SCAN_GEN: u64 = 4;
    pub const WIENER: u64 = 5;
    pub const ENSEMBLE: u64 = 6;
    pub const OU: u64 = 7;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mix several words into one 64-bit seed.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6a09_e667_f3bc_c909, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

pub fn stream(master: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[master, domain]));
    rng.set_stream(index);
    rng
}
