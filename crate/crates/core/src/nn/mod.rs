//! A small deterministic double-precision network runtime: the layer kinds
//! the fusion and predictor networks need, exact reverse-mode gradients, and
//! Adam.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod layers;
mod lstm;
mod sequential;
mod tensor;

pub use adam::AdamState;
pub use layers::{
    BatchNorm, Cache, Dense, Dropout, Init, Layer, LayerKind, LayerSpec, Standardize,
};
pub use lstm::{Lstm, LstmCache};
pub use sequential::{Module, Sequential, SequentialCache};
pub use tensor::Tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Identifies one dropout draw: `(seed, epoch, batch)` plus the layer's
/// position in the network. Each key seeds an independent ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepKey {
    pub seed: u64,
    pub epoch: u64,
    pub batch: u64,
}

impl StepKey {
    pub fn new(seed: u64, epoch: u64, batch: u64) -> Self {
        Self { seed, epoch, batch }
    }

    pub(crate) fn rng_for_layer(&self, layer: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(&[self.seed, self.epoch, self.batch, layer]))
    }
}

/// SplitMix64-style combination of several words into one seed.
pub(crate) fn mix(words: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &w in words {
        let mut z = h ^ w.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
