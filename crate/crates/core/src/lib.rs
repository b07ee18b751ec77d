//! Wrapped normal distributions on the Lorentz model of hyperbolic space,
//! including the rotated variant with full-rank covariance, plus the
//! experiments built on top of them.

pub mod autodiff;
pub mod datasets;
pub mod distributions;
pub mod eval;
pub mod error;
pub mod geometry;
pub mod hyper;
pub mod linalg;
pub mod models;
pub mod special;

pub use error::{Error, Result};

use rand::SeedableRng;

/// Every random draw in the crate goes through this generator.
pub type Rng = rand_chacha::ChaCha20Rng;

/// Name recorded in run metadata.
pub const RNG_NAME: &str = "ChaCha20 (rand_chacha), seeded via seed_from_u64";

pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
