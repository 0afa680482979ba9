//! Numerical laboratory for random matrix products: Lyapunov spectra,
//! Oseledets splittings, Furstenberg measures on projective space, and
//! empirical checks of their dimension theory.

pub mod boundary;
pub mod checks;
pub mod cocycle;
pub mod dimension;
pub mod ensemble;
pub mod entropy;
pub mod error;
pub mod fixtures;
pub mod linalg;
pub mod projective;
pub mod rng;
pub mod stats;

pub use error::{LabError, Result};
