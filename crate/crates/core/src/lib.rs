//! Euclidean distance matrix (EDM) generation and a Wasserstein GAN with a
//! permutation-invariant critic for learning distributions of point clouds.
//!
//! The generator never places coordinates. It emits an unconstrained
//! symmetric matrix which is mapped onto the PSD cone (rank capped at three)
//! and turned into a Gram matrix and then an EDM, so every sample is a valid
//! three-dimensional structure by construction.

pub mod config;
pub mod data;
pub mod diff;
pub mod edm;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod networks;
pub mod structure;
pub mod training;

pub use error::{Error, Result};
