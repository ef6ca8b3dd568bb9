//! Seeded randomness. Every stochastic step in the pipeline draws from a
//! ChaCha8 stream so that a (config, seed) pair fully determines the run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Scalar, Tensor};

/// The one generator used everywhere: ChaCha8, keyed by a u64 seed.
pub type Prng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Prng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a sub-task (param init, shuffling,
/// data generation) so that consumers cannot perturb each other's draws.
pub fn substream(seed: u64, tag: u64) -> Prng {
    // splitmix64 finalizer keeps nearby (seed, tag) pairs uncorrelated
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    seeded(z ^ (z >> 31))
}

/// Fills a tensor with N(0, sigma) draws. Sampling happens in f64 and is
/// cast down, so a given seed produces the same underlying values at both
/// precisions.
pub fn fill_gaussian<T: Scalar>(tensor: &mut Tensor<T>, sigma: f64, rng: &mut Prng) {
    let normal = Normal::new(0.0f64, sigma).expect("sigma must be finite and positive");
    for v in tensor.data_mut() {
        *v = T::of(normal.sample(rng));
    }
}

/// He initialization for relu stacks: N(0, sqrt(2 / fan_in)).
pub fn fill_he<T: Scalar>(tensor: &mut Tensor<T>, fan_in: usize, rng: &mut Prng) {
    fill_gaussian(tensor, (2.0 / fan_in as f64).sqrt(), rng);
}

/// In-place Fisher-Yates shuffle; spelled out so the draw sequence is part
/// of this crate's contract rather than a rand implementation detail.
pub fn shuffle<T>(items: &mut [T], rng: &mut Prng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}
