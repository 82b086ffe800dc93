//! Numerical laboratory for interacting Langevin particle systems and their
//! mean-field limits.
//!
//! The library simulates ensembles of N coupled diffusions (overdamped and
//! underdamped), solves the limiting PDEs on matched grids, estimates
//! m-particle marginals and their cumulants from samples, and fits the
//! N- and t-scaling of the resulting errors. Everything is deterministic
//! given a seed, independent of thread count.
//!
//! Numeric code is generic over the scalar type through [`scalar::Scalar`]
//! (`f32` or `f64`); the concrete aliases below fix `f64`, which is what the
//! shipped experiments and tolerances assume.

pub mod cumulants;
pub mod equilibrium;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod fitting;
pub mod fourier;
pub mod grid;
pub mod kernels;
pub mod meanfield;
pub mod norms;
pub mod scalar;
pub mod sim;
pub mod wasserstein;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used by the concrete aliases and the experiment layer.
pub type Real = f64;

/// Signed grid field over `Real`.
pub type Field = grid::SignedGridField<Real>;

/// Probability density on a grid over `Real`.
pub type Density = grid::GriddedDensity<Real>;

/// Interaction kernel over `Real`.
pub type Kernel = kernels::KernelSpec<Real>;

/// Particle ensemble over `Real`.
pub type Ensemble = sim::EnsembleState<Real>;

