//! Numerical laboratory for regular linear systems with delays.
//!
//! The crate realizes an operator calculus for finite-dimensional regular
//! linear systems (composition, feedback closure, perturbation identities),
//! lifts state-delay systems into larger undelayed generators, and simulates
//! delayed age-structured population dynamics together with their spectral
//! stability theory (characteristic functions, growth-bound trichotomy,
//! harvesting input).
//!
//! Module map:
//! - [`matrix`]: dense linear-algebra kernel (exponential, solves, block
//!   inversion, dominant-eigenvalue iteration, ZOH discretization),
//! - [`system`]: state-space systems, sampled signals, the maps T/Φ/Ψ/F,
//!   feedback closure, and identity verification suites,
//! - [`delay`]: history lifting of delay systems, characteristic functions,
//!   rightmost real roots, resolvent-structure checks,
//! - [`population`]: the delayed age-structured population simulator,
//! - [`spectral`]: characteristic functions ξ₁/ξ₂, stability classification,
//!   growth-rate fitting, and simulation cross-checks.

pub mod delay;
pub mod matrix;
pub mod population;
pub mod spectral;
pub mod system;

pub use matrix::{BlockMatrix2x2, DenseMatrix, MatrixError};
pub use population::{AgePopulationModel, PopulationState, Trajectory};
pub use spectral::SpectralReport;
pub use system::{IdentityResidualReport, SampledSignal, StateSpaceSystem};
