//! Bayesian inference and prediction for spatiotemporal dynamic Poisson
//! models of daily counts.
//!
//! The log-rate at site `s` and day `t` is a random-walk spatial intercept,
//! plus dynamic seasonal states, plus fixed covariate effects, plus white
//! noise. The intercept is carried either by a dense Matérn field over the
//! sites or by a sparse SPDE/GMRF field on a triangular mesh. A hybrid MCMC
//! sampler (preconditioned MALA, sequential Gibbs, FFBS, random-walk
//! Metropolis and conjugate updates) fits the model; the [`predict`] module
//! turns posterior draws into imputations, kriging, forecasts and annual
//! averages.

pub mod error;
pub mod field;
pub mod linalg;
pub mod model;
pub mod predict;
pub mod sampler;
pub mod simulate;
pub mod spde;
pub mod special;
pub mod summary;

pub use error::{Error, Result};
pub use model::{
    build_dense_correlation, conditional_mean_lambda, log_poisson_lik, matern_correlation, Dataset,
    HyperState, InvGammaPrior, LatentState, MaternParams, ModelPath, PriorConfig, SpatialLocation,
};
