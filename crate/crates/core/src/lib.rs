//! Hamiltonian Monte Carlo on matrix Lie groups and naturally reductive
//! homogeneous spaces.
//!
//! All mechanics runs on the left-trivialized phase space `G × g`: a state is a
//! group matrix `q` plus body-frame algebra coefficients `v`. Trajectories are
//! compositions of exact potential kicks and exact geodesic drifts, so the
//! plain Metropolis ratio `e^{−ΔH}` targets `e^{−V}` against Haar measure.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod expmap;
pub mod flows;
pub mod homogeneous;
pub mod integrators;
pub mod lie;
pub mod potentials;
pub mod random;
pub mod sampler;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
