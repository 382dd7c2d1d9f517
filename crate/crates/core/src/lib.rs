//! Finite-temperature observables of the long-range transverse-field Ising
//! chain from Monte Carlo sampling of product states weighted by their
//! short-time Loschmidt echoes.
//!
//! The pipeline runs [`dynamics`] (echo series) → [`spectral`] (filtered work
//! distribution and Boltzmann weight) → [`sampler`] (Metropolis chain and
//! jackknife errors). [`protocol`] replaces exact echoes with a simulated
//! trapped-ion Ramsey measurement, and [`oracle`] provides exact
//! diagonalization references.

pub mod dynamics;
pub mod error;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod protocol;
pub mod sampler;
pub mod spectral;

pub use error::{Error, Result};
