//! Comoving charts built from the phase of a Klein-Gordon field, Nelson-type
//! diffusion on the resulting spatial leaves, and the estimators and
//! residual checks that tie the two pictures together.
//!
//! Layering, bottom up:
//!
//! - [`fields`]: physical constants, four-vectors, mode-sum Klein-Gordon
//!   solutions and the derived velocity fields.
//! - [`chart`]: worldline integration, the reference hypersurface and the
//!   comoving chart map with its inverse and Jacobian.
//! - [`geometry`]: pulled-back metrics, Christoffel symbols, curvature and
//!   the Laplace-Beltrami operator on 1-forms.
//! - [`diffusion`]: Euler-Maruyama path ensembles, drift estimation and
//!   specular time reversal.
//! - [`estimators`]: binned density and velocity estimates, energy and
//!   action functionals.
//! - [`dynamics`]: Klein-Gordon residuals in both charts, currents, boosts
//!   and the non-relativistic limit study.

// Negated float comparisons reject NaN; index loops mirror tensor notation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod chart;
pub mod diffusion;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod fields;
pub mod geometry;
pub mod numerics;
pub mod rng;

pub use error::{Error, Result};
pub use exec::Execution;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
