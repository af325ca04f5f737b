//! Building blocks for studying learning with noisy labels at desk scale.
//!
//! - [`data`]: synthetic Gaussian mixtures, CSV datasets, splits and batching.
//! - [`noise`]: transition matrices, label-noise injection and down-sampling.
//! - [`losses`]: robust supervised losses, InfoNCE and the representation
//!   regularizer, all with analytic gradients.
//! - [`model`]: a small tanh MLP with classifier and projection heads.
//! - [`theory`]: bound calculators and numerical checks of the closed forms.

pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod noise;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
