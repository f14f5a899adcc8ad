//! Energy-based models with a pairwise feature-diversity regularizer.
//!
//! The crate covers the full loop for 1-D conditional density estimation:
//! synthetic data ([`dataio`]), feature networks ([`numerics`]), energy
//! functions and inference ([`energy`]), NCE training with the diversity
//! penalty ([`training`]), grid-based density evaluation ([`evaluation`]),
//! and empirical checks of diversity-dependent generalization bounds
//! ([`bounds`]).

pub mod bounds;
pub mod dataio;
pub mod diversity;
pub mod energy;
pub mod error;
pub mod evaluation;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
