//! Forward-Forward training and analysis for fully-connected sigmoid networks
//! scored by max-unit goodness.
//!
//! The crate trains three model variants on 28x28 grayscale category data:
//! layer-local Forward-Forward (`ff`), the same objective optimized end to end
//! by backprop (`bpff`), and a conventional softmax classifier (`bp`). On top
//! of trained networks it extracts per-category representation matrices and
//! detects the small neuron ensembles that carry each category, by two
//! independent methods, plus weight-sign statistics and an unseen-category
//! probe.
//!
//! Everything is deterministic given a master seed: data order, negative
//! label draws, weight init, and the matrix kernels themselves.

pub mod analysis;
pub mod data;
pub mod error;
pub mod inference;
pub mod mat;
pub mod network;
pub mod rng;
#[cfg(feature = "synthdata")]
pub mod synth;
pub mod training;

pub use error::{Error, Result};
