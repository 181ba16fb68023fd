//! Generalized geometry on flat tori, computed spectrally.
//!
//! Exact and odd exact Courant algebroids over `T^2` and `T^3`: twisted Dorfman
//! brackets, their symmetry groups and derivations, Hodge theory for arbitrary
//! metrics, generalized metrics, finite-dimensional slice operators and the
//! stratification by generalized isometry groups.

pub mod courant;
pub mod error;
pub mod genmetric;
pub mod grid;
pub mod hodge;
pub mod linalg;
pub mod rng;
pub mod slice;
pub mod strata;
pub mod symmetry;

pub use error::{GeomError, Result};
