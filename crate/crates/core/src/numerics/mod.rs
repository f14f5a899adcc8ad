//! Dense arithmetic, feed-forward networks, Adam, and a finite-difference
//! gradient oracle.

mod adam;
mod finite_diff;
mod matrix;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use finite_diff::{finite_diff_grad, relative_error};
pub use matrix::Matrix;
pub use mlp::{Activation, Dense, DenseGrads, MlpCache, MlpGrads, MlpParams};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for `(seed, stream)`. Distinct streams of one
/// seed are independent, so initialization, shuffling and noise draws do
/// not perturb each other.
pub fn rng_from_seed(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
