//! Gibbs measures relative to Brownian motion on a discretized time window.

pub mod cluster;
pub mod config;
pub mod error;
pub mod experiments;
pub mod mcmc;
pub mod model;
pub mod spectral;

pub use error::{Error, Result};
pub use model::{
    BoundaryCondition, EnergyForm, GibbsModel, PairKernelSpec, PathSample, TimeGrid,
};
pub use spectral::{ground_state, Grid1D, PotentialSpec, SpectralData};
