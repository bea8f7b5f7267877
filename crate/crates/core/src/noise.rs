//! Counter-based Gaussian measurement noise.
//!
//! Every scalar channel owns a ChaCha stream; draw `k` of a channel sits at a
//! fixed word offset, so a value depends only on `(seed, channel, k)` and not
//! on how many other draws happened before it.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::{lit, Real};

/// Words reserved per draw; the normal sampler's rejection path needs more
/// than one only rarely.
const WORDS_PER_DRAW: u128 = 64;

/// Measured channel groups, three scalar channels each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Position = 0,
    Attitude = 3,
    ReferencePosition = 6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    seed: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Standard normal draw number `counter` of scalar channel `channel`.
    pub fn standard_normal(&self, channel: u64, counter: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(channel);
        rng.set_word_pos(counter as u128 * WORDS_PER_DRAW);
        StandardNormal.sample(&mut rng)
    }

    /// `values + std * n` with independent draws per axis.
    pub fn inject<T: Real>(&self, values: &Vector3<T>, std: f64, group: Channel, counter: u64) -> Vector3<T> {
        if std == 0.0 {
            return *values;
        }
        let base = group as u64;
        Vector3::from_fn(|i, _| values[i] + lit::<T>(std * self.standard_normal(base + i as u64, counter)))
    }
}
