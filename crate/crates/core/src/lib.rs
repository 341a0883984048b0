//! Bayesian inference for the matrix Langevin distribution on the Stiefel
//! manifold: conjugate priors, Gibbs samplers and the special functions that
//! normalize the density.

pub mod cli;
pub mod error;
pub mod inference;
pub mod matfn;
pub mod priors;
pub mod samplers;
pub mod stiefel;

pub use error::{Error, Result};
