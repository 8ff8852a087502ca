//! Two-step Bayesian parameter inference for ODE models observed under
//! heteroscedastic measurement error.
//!
//! Step one learns a time-varying observation variance from the data with a
//! heteroscedastic Gaussian process ([`hetgp`]). Step two plugs that variance
//! into a Gaussian likelihood and samples the ODE parameters with random-walk
//! Metropolis–Hastings ([`bayes`]). The forward models live in [`ode`], the
//! posterior comparison tooling (MMD, predictive bands, KDE) in [`metrics`].

pub mod bayes;
pub mod data;
pub mod error;
pub mod gp;
pub mod hetgp;
pub mod metrics;
pub mod ode;
pub mod optim;
pub mod rng;

pub use bayes::{
    adapt_proposal, gelman_rubin, hetero_log_likelihood, homo_log_likelihood, log_posterior,
    mh_sample, r0_posterior, sample_posterior, Chain, ModelTemplate, NoiseModel, ParameterPrior,
    Posterior, Prior, PriorSpec, SamplerOutput, SamplerSettings, SigmaField, Target, Transform,
};
pub use data::TimeSeries;
pub use error::{Error, Result};
pub use gp::{GpFit, KernelParams};
pub use hetgp::{
    check_homoscedastic, fit_hetgp, HetGpConfig, HetGpFit, ModelChoice, NoiseChoice, ResidualKind,
};
pub use metrics::{kde_1d, median_heuristic, mmd_squared, predictive_band, MmdResult, PredictiveBand};
pub use ode::{ModelKind, OdeModel, Trajectory};
