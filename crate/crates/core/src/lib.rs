//! Exact and numerical tools for density problems of integer forms: local
//! densities, singular series and integrals, arithmetic kernels with their
//! progression models, and brute-force lattice enumeration to check the
//! predicted main terms.

pub mod arith;
pub mod cli;
pub mod error;
pub mod cramer;
pub mod enumerate;
pub mod forms;
pub mod harness;
pub mod kernels;
pub mod localdensity;
pub mod shiftedconv;
pub mod singularintegral;

pub use error::{Error, Result};
pub use forms::{FormBound, IntegerForm, LatticeBox};
