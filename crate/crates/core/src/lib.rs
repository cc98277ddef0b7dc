//! Manifold estimation from point samples.
//!
//! Two approximate squared-distance functions (a kernel density estimate and a
//! local-PCA cylinder packet) are fitted to a sample, and mesh points are then
//! pushed onto the d-dimensional ridge of the fitted function by
//! subspace-constrained gradient descent.

pub mod geometry;
pub mod asdf;
pub mod cli;
pub mod kde_asdf;
pub mod linalg;
pub mod metrics;
pub mod pca_asdf;
pub mod ridge;
