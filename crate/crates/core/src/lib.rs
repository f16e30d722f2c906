//! Transparent barrier spatial Gaussian fields on triangulated domains.
//!
//! The crate assembles sparse precision matrices for Matérn (ν = 1) fields
//! whose range varies by subdomain, factorizes them, and builds correlation
//! diagnostics, transparency calibration and likelihood-based fitting on top.

pub mod correlation;
pub mod error;
pub mod fem;
pub mod fixtures;
pub mod gmrf;
pub mod inference;
pub mod mesh;
pub mod precision;
pub mod sparse;
pub mod spline;
pub mod transparency;

pub use error::{Error, Result};
