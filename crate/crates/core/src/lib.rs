//! Discrete-time data assimilation.
//!
//! Exact Gaussian smoothing and filtering, MCMC path samplers, variational
//! (4DVAR) estimation, ensemble and particle filters, over a shared set of
//! benchmark dynamical models.

pub mod diagnostics;
pub mod error;
pub mod filters;
pub mod linalg;
pub mod mcmc;
pub mod models;
pub mod prob;
pub mod rng;
pub mod smoothing;
pub mod types;
pub mod variational;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use models::{ModelSpec, ObservationSequence, ObservationSpec};
pub use prob::{GriddedDensity1D, WeightedSamples};
pub use rng::RngStream;
pub use types::{GaussianState, StateVector, Trajectory};
