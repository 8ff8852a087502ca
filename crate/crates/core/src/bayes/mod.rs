//! Priors, likelihoods and random-walk Metropolis–Hastings for ODE parameters.

mod diagnostics;
mod likelihood;
mod mh;
mod posterior;
mod prior;
mod sampler;

pub use diagnostics::{adapt_proposal, gelman_rubin, r0_posterior, MIN_PILOT_DRAWS, MIN_RHAT_LENGTH};
pub use likelihood::{hetero_log_likelihood, homo_log_likelihood, SigmaField, VariancePredictor};
pub use mh::{mh_sample, Chain, FnTarget, Target};
pub use posterior::{log_posterior, ModelTemplate, NoiseModel, Posterior, NOISE_SCALE, SQRT_TIME_REFERENCE};
pub use prior::{ParameterPrior, Prior, PriorSpec, Transform};
pub use sampler::{find_mode, sample_posterior, SamplerOutput, SamplerSettings};
