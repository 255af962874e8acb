//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose 256-bit key
//! is `(seed, domain, a, b)` and whose stream selector is a fifth counter. A path's
//! Brownian increments are keyed by `(seed, input, path)` with the solver step as
//! the selector, so results never depend on how many paths or inputs are
//! evaluated together or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;

/// Independent purposes that draw randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Init,
    PathNoise,
    TrainNoise,
    Shuffle,
    DiffusionBatch,
    OodNoise,
    Split,
    Acquisition,
    Attack,
    Data,
    Selfcheck,
}

impl Domain {
    fn tag(self) -> u64 {
        // Arbitrary distinct constants; part of the reproducibility contract.
        match self {
            Domain::Init => 0x1d17_0001,
            Domain::PathNoise => 0x1d17_0002,
            Domain::TrainNoise => 0x1d17_0003,
            Domain::Shuffle => 0x1d17_0004,
            Domain::DiffusionBatch => 0x1d17_0005,
            Domain::OodNoise => 0x1d17_0006,
            Domain::Split => 0x1d17_0007,
            Domain::Acquisition => 0x1d17_0008,
            Domain::Attack => 0x1d17_0009,
            Domain::Data => 0x1d17_000a,
            Domain::Selfcheck => 0x1d17_000b,
        }
    }
}

pub fn stream(seed: u64, domain: Domain, a: u64, b: u64) -> ChaCha8Rng {
    keyed(seed, domain, a, b, 0)
}

/// Stream `(seed, domain, a, b)` with sub-stream selector `step`.
pub fn keyed(seed: u64, domain: Domain, a: u64, b: u64, step: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([seed, domain.tag(), a, b]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(step);
    rng
}

pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Brownian increments `Z_k` for one solver step: row `i` is drawn from the
/// stream keyed by `(seed, domain, row_keys[i], path)` at selector `step`.
pub fn step_noise(seed: u64, domain: Domain, row_keys: &[u64], path: u64, step: u64, width: usize) -> Tensor {
    let mut data = Vec::with_capacity(row_keys.len() * width);
    for &key in row_keys {
        let mut rng = keyed(seed, domain, key, path, step);
        data.extend((0..width).map(|_| standard_normal(&mut rng)));
    }
    Tensor::matrix(row_keys.len(), width, data).expect("shape matches data length")
}
