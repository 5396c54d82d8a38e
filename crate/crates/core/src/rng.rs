//! Seeded random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for `stream` from a base seed.
pub fn derive(seed: u64, stream: u64) -> Rng {
    seeded(mix(seed ^ mix(stream.wrapping_add(0x9E37_79B9_7F4A_7C15))))
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform index in `0..n` excluding `skip`. Requires `n >= 2` and `skip < n`.
pub(crate) fn index_excluding<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, skip: usize) -> usize {
    debug_assert!(n >= 2 && skip < n);
    let j = rng.random_range(0..n - 1);
    if j >= skip {
        j + 1
    } else {
        j
    }
}
