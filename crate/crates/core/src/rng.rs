//! Seed derivation. Every stochastic step takes its own generator derived
//! from a base seed and a tuple of stream identifiers, so results do not
//! depend on scheduling order.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags keep derived seeds for different purposes apart.
pub mod stream {
    pub const INIT: u64 = 0x01;
    pub const PARTITION: u64 = 0x02;
    pub const SYNTHETIC: u64 = 0x03;
    pub const AUGMENT: u64 = 0x04;
    pub const SHUFFLE: u64 = 0x05;
    pub const EXPLORE: u64 = 0x06;
    pub const PARTICIPATION: u64 = 0x07;
    pub const LOCAL: u64 = 0x08;
    pub const RESTART: u64 = 0x09;
    pub const RELEVANCE: u64 = 0x0a;
    pub const PROBE: u64 = 0x0b;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with an ordered list of identifiers.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(base: u64, parts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, parts))
}

/// One standard normal draw.
pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}
