//! Adaptive finite element simulation of the stochastic Cahn-Hilliard
//! equation with regularized space-time noise.

pub mod adapt;
pub mod eigen;
pub mod error;
pub mod estimators;
pub mod fem;
pub mod harness;
pub mod mesh;
pub mod noise;
pub mod scheme;

pub use error::{Error, Result};
