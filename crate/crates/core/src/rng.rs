//! Seeded, platform-independent random streams.
//!
//! Every stochastic step in the crate draws from xoshiro256** whose state is
//! expanded from a 64-bit seed with SplitMix64, so results depend only on the
//! seed and never on the host.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

pub type Prng = Xoshiro256StarStar;

pub fn from_seed(seed: u64) -> Prng {
    Prng::seed_from_u64(seed)
}

/// Stream for the `index`-th sampling chain of a request seeded with `seed`.
pub fn chain(seed: u64, index: u64) -> Prng {
    from_seed(seed.wrapping_add(index))
}

/// Mix a base seed with stream coordinates into an independent seed.
pub fn derive(seed: u64, coords: &[u64]) -> u64 {
    let mut h = seed ^ 0x6A09_E667_F3BC_C909;
    for &c in coords {
        h = splitmix64(h ^ c.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
pub fn unit(rng: &mut Prng) -> f64 {
    rng.random::<f64>()
}
