//! Large-deviation rate functions for additive functionals of
//! nonhomogeneous finite-state Markov chains whose kernels converge.

pub mod chain_model;
pub mod chain_spec;
pub mod cli;
pub mod composite_rate;
pub mod decomposition;
pub mod error;
pub mod evolution_oracle;
pub mod fixtures;
pub mod numerics;
pub mod routing_costs;
pub mod spectral_rate;

pub use error::{Error, Result};
