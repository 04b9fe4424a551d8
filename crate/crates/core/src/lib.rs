//! Sequential Bayesian experimental design for symbolic model discovery.
//!
//! This crate is `no_std` (with `alloc`) and holds the numerical engine:
//!
//! * [`expr`]: parse, evaluate and differentiate model expressions,
//! * [`model`]: candidate models, priors, posteriors and marginal likelihoods,
//! * [`hmc`]: Hamiltonian Monte Carlo for the parameter sample sets,
//! * [`predictive`]: predictive density and response entropy (quadrature and
//!   binned convolution backends),
//! * [`criteria`]: design scores (response entropy, Jensen-Shannon, logdet),
//! * [`designer`]: box-constrained design optimization and the sequential
//!   propose / observe loop.
//!
//! IO, configuration files, the CLI and the HTTP service live in the
//! `symdisc` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod criteria;
pub mod designer;
mod error;
pub mod expr;
pub mod hmc;
pub mod math;
pub mod model;
pub mod predictive;
pub mod rng;

pub use error::{Error, Result};
