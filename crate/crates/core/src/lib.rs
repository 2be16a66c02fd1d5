//! Recovery of simplex-structured latent factors from nonlinearly distorted
//! linear mixtures.
//!
//! The observed data follow X = phi(A S) where S has columns on the
//! probability simplex, A is nonnegative, and phi applies an unknown strictly
//! monotone function per feature. The toolkit learns per-feature invertible
//! functions whose outputs sum to one across features, which cancels the
//! distortion up to a linear map; a minimum-volume enclosing-simplex
//! factorization then recovers the sources up to row permutation.
//!
//! Modules:
//! - [`model`]: synthetic data generation and structural checks.
//! - [`nonlinear`]: the scalar distortion library.
//! - [`feasibility`]: constructive certificates that the sum-to-one
//!   criterion is attainable.
//! - [`net`]: the constrained one-hidden-layer function family.
//! - [`solver`]: bound-constrained nonlinear least squares with multi-start.
//! - [`mves`]: the enclosing-simplex factorization.
//! - [`eval`]: aligned error metrics and diagnostics.
//! - [`pipeline`]: the end-to-end procedure and experiment harness.
//! - [`io`]: CSV/JSON serialization.

pub mod error;
pub mod eval;
pub mod feasibility;
pub mod io;
pub mod lp;
pub mod model;
pub mod mves;
pub mod net;
pub mod nonlinear;
pub mod pipeline;
pub mod seeds;
pub mod solver;

pub use error::{Error, Result};
