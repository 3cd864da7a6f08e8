//! Variable-index Besov priors on the 1-torus and Bayesian inversion for
//! integer- and fractional-order backward diffusion.

pub mod bayes;
pub mod cli;
pub mod error;
pub mod exponent;
pub mod forward;
pub mod io;
pub mod map;
pub mod modular;
pub mod prior;
pub mod quadrature;
pub mod rng;
pub mod wavelet;

pub use error::{Error, Result};
