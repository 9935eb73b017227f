//! Seeded random streams.
//!
//! Every stochastic component draws from a ChaCha stream derived from one
//! user seed plus a fixed stream id, so runs are reproducible and adding a
//! consumer never shifts the draws of another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids, one per independent consumer of randomness.
pub mod stream {
    pub const SBM_BLOCK_MEANS: u64 = 1;
    pub const SBM_EDGES: u64 = 2;
    pub const SBM_FEATURES: u64 = 3;
    pub const ENCODER_INIT: u64 = 10;
    pub const NMN_INIT: u64 = 11;
    pub const PROBE_INIT: u64 = 12;
    pub const KMEANS: u64 = 13;
    pub const SPLIT: u64 = 14;
    /// Augmentation uses `AUGMENT_BASE + 2*epoch` for the first view and
    /// `AUGMENT_BASE + 2*epoch + 1` for the second.
    pub const AUGMENT_BASE: u64 = 1000;
}

/// A ChaCha generator for the given seed and stream id.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal draw via Box-Muller on two uniform samples.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    // u1 in (0, 1] avoids ln(0).
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
