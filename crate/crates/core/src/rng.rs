//! Seed derivation for reproducible probe streams.
//!
//! Every random quantity is drawn from its own stream keyed by
//! `(root seed, index)`, so results do not depend on the order in which
//! probes, splits, or sweep cells are evaluated.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a stream index into an independent seed.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    splitmix64(root ^ splitmix64(stream.wrapping_add(0x632B_E59B_D9B4_E019)))
}

pub fn stream_rng(root: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream))
}

/// `n x count` matrix of i.i.d. Rademacher (+1/-1) probes. Column `b` is drawn
/// from stream `(seed, b)`, so the first columns of a wider draw match a
/// narrower draw with the same seed.
pub fn rademacher_probes(n: usize, count: usize, seed: u64) -> Mat<f64> {
    let mut z = Mat::<f64>::zeros(n, count);
    for b in 0..count {
        let mut rng = stream_rng(seed, b as u64);
        for v in z.col_as_slice_mut(b) {
            *v = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
    }
    z
}
