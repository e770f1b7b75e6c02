//! Minimal differentiable-computation core.

mod layer;
mod matrix;
mod optim;

pub use layer::{
    accumulate_grads, grad_slices, sigmoid, Activation, DenseLayer, LayerGrad, Mlp, Tape,
};
pub use matrix::{dot, squared_distance, Matrix};
pub use optim::{LrSchedule, OptimizerState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The crate-wide deterministic generator.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream from `seed` for a named purpose.
pub fn derived_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
