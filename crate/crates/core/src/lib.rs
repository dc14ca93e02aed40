//! Quantum detector tomography with regularized weighted least squares.

pub mod analysis;
pub mod basis;
pub mod config;
pub mod correction;
pub mod design;
pub mod detector;
pub mod error;
pub mod estimators;
pub mod kernels;
pub mod linalg;
pub mod measurement;
pub mod pipeline;
pub mod rng;
pub mod scaling;
pub mod states;

pub use error::{QdtError, Result};
