//! Seeded random number helpers.
//!
//! All stochastic behaviour in the crate flows through a `ChaCha8Rng`
//! seeded from a caller-provided `u64`, so every path is replayable.
//! Derived seeds let independent work items (samples, layers, batch
//! entries) draw from their own streams: results do not depend on the
//! order or parallelism of the items.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stateless seed derivation (splitmix64 over master and stream index).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut x = master
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(0x94d0_49bb_1331_11eb);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// One standard-normal draw via Box-Muller.
pub fn next_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Open interval keeps ln() finite.
    let u1: f64 = loop {
        let u = rng.gen::<f64>();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn fill_normal(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = next_normal(rng);
    }
}

pub fn normal_vec(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let mut out = vec![0.0; len];
    fill_normal(&mut rng, &mut out);
    out
}
