//! Seeded, splittable random streams.
//!
//! Each consumer (initialization, shuffling, layer selection, data synthesis)
//! draws from its own ChaCha stream, keyed by `(seed, purpose, index)`. Changing
//! how many numbers one consumer draws never shifts another consumer's sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u16)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Selection = 3,
    Synth = 4,
    Split = 5,
    Test = 0xfff,
}

/// Resumable position in a stream: enough to rebuild it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub position: u128,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Stream for `purpose`, sub-indexed by `index` (an epoch, a layer id, ...).
    pub fn derive(seed: u64, purpose: Purpose, index: u64) -> Self {
        let stream = ((purpose as u64) << 48) | (index & 0xffff_ffff_ffff);
        Self::with_stream(seed, stream)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Draw counter, in 32-bit words consumed.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.stream,
            position: self.position(),
        }
    }

    pub fn restore(state: RngState) -> Self {
        let mut s = Self::with_stream(state.seed, state.stream);
        s.rng.set_word_pos(state.position);
        s
    }

    /// One draw from U[0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_uniform()).collect()
    }

    pub fn next_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.rng.random_range(0..=i);
            idx.swap(i, j);
        }
        idx
    }
}
