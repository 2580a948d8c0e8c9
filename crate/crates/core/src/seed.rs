//! Seed derivation. Every random stream in the crate is keyed by an explicit
//! base seed plus a path of integers (sample index, epoch, ...), so streams
//! are independent of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0x5851_F42D))))
}

pub fn rng_for(base: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, path))
}
