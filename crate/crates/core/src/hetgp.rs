//! Heteroscedastic GP: a mean GP and a log-variance GP fitted by alternating
//! marginal-likelihood maximisation.
//!
//! Each iteration optimises the mean GP under the current per-point noise
//! variances, takes squared residuals against its posterior mean, fits a
//! second GP (with its own homoscedastic nugget) to the log residuals, and
//! feeds `exp` of that GP's posterior mean back in as the new variances.

use crate::data::{sample_variance, TimeSeries};
use crate::error::{Error, Result};
use crate::gp::{self, GpFit, NoiseSpec, DEFAULT_STARTS};
use crate::optim::NelderMead;

/// `E[ln χ²₁] = ψ(1/2) + ln 2`.
pub const LOG_CHI2_1_MEAN: f64 = -1.270_362_845_461_478;

/// Residuals are floored at this fraction of the sample variance before the
/// log is taken.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

pub const MIN_OBSERVATIONS: usize = 4;

/// Initial simplex edge for warm-started hyperparameter searches.
const WARM_STEP: f64 = 0.1;

/// Which residuals feed the log-variance GP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualKind {
    /// Against the mean GP's posterior mean at the training inputs.
    Fitted,
    /// Against the leave-one-out predictive mean, so a point's own noise
    /// variance cannot shrink its residual.
    LeaveOneOut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HetGpConfig {
    /// Convergence tolerance on hyperparameter (log space) and variance
    /// changes. `f64::INFINITY` stops after the first iteration.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Starting noise variance; defaults to a tenth of the sample variance.
    pub initial_variance: Option<f64>,
    /// Whether callers should compare against a homoscedastic fit
    /// ([`check_homoscedastic`]).
    pub check_hom: bool,
    /// Shift log squared residuals by `-E[ln χ²₁]` so the log-variance GP
    /// targets `ln σ²` rather than `ln σ² - 1.27`.
    pub debias_log_residuals: bool,
    pub residuals: ResidualKind,
}

impl Default for HetGpConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            max_iterations: 20,
            initial_variance: None,
            check_hom: true,
            debias_log_residuals: true,
            residuals: ResidualKind::LeaveOneOut,
        }
    }
}

impl HetGpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput(
                "max_iterations must be at least 1".into(),
            ));
        }
        if let Some(v) = self.initial_variance {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "initial variance must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HetGpFit {
    /// Mean GP conditioned on the final variance estimates.
    pub mean_fit: GpFit,
    /// GP on the (possibly debiased) log squared residuals.
    pub var_fit: GpFit,
    /// `exp` of the log-variance posterior mean at each observation time.
    pub sigma2_hat: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Mean-GP log marginal likelihood under `sigma2_hat`.
    pub marginal_loglik: f64,
}

impl HetGpFit {
    /// Variance estimate at arbitrary times (between observations too).
    pub fn variance_at(&self, times: &[f64]) -> Vec<f64> {
        variance_from_log_gp(&self.var_fit, times)
    }
}

pub(crate) fn variance_from_log_gp(var_fit: &GpFit, times: &[f64]) -> Vec<f64> {
    var_fit.predict(times).mean.into_iter().map(f64::exp).collect()
}

/// `(ỹᵢ - f̂(tᵢ))²` against the posterior mean at the training inputs.
pub fn squared_residuals(data: &TimeSeries, mean_fit: &GpFit) -> Vec<f64> {
    let fhat = mean_fit.predict(data.times()).mean;
    data.values()
        .iter()
        .zip(fhat)
        .map(|(y, f)| (y - f).powi(2))
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn fit_hetgp(data: &TimeSeries, config: &HetGpConfig) -> Result<HetGpFit> {
    config.validate()?;
    if data.len() < MIN_OBSERVATIONS {
        return Err(Error::InsufficientData {
            required: MIN_OBSERVATIONS,
            got: data.len(),
        });
    }
    let n = data.len();
    let var_y = sample_variance(data.values());
    let var_y = if var_y > 0.0 { var_y } else { 1.0 };
    let floor = RESIDUAL_FLOOR * var_y;
    let shift = if config.debias_log_residuals {
        -LOG_CHI2_1_MEAN
    } else {
        0.0
    };
    let optimizer = NelderMead::default();
    // Later iterations start from the previous optimum, so a tighter
    // simplex suffices.
    let warm = NelderMead {
        initial_step: WARM_STEP,
        ..NelderMead::default()
    };

    let mut sigma2 = vec![config.initial_variance.unwrap_or(0.1 * var_y); n];
    let mean_starts = gp::default_starts(data, false, DEFAULT_STARTS);
    let mut phi_mean = mean_starts[DEFAULT_STARTS / 2].clone();
    let mut phi_var: Option<Vec<f64>> = None;
    let mut var_fit: Option<GpFit> = None;
    let mut iterations = 0;
    let mut converged = false;

    for j in 1..=config.max_iterations {
        iterations = j;
        // Mean step.
        let starts = if j == 1 {
            mean_starts.clone()
        } else {
            vec![phi_mean.clone()]
        };
        let opt = if j == 1 { &optimizer } else { &warm };
        let mean_fit = gp::optimise(data, NoiseSpec::Fixed(&sigma2), None, &starts, opt)?;

        // Residuals.
        let resid = match config.residuals {
            ResidualKind::Fitted => squared_residuals(data, &mean_fit),
            ResidualKind::LeaveOneOut => mean_fit.loo_residuals().iter().map(|r| r * r).collect(),
        };
        let z: Vec<f64> = resid
            .into_iter()
            .map(|r| r.max(floor).ln() + shift)
            .collect();
        let log_resid = data.with_values(z)?;

        // Variance step.
        let (var_starts, var_opt) = match &phi_var {
            Some(prev) => (vec![prev.clone()], &warm),
            None => (gp::default_starts(&log_resid, true, DEFAULT_STARTS), &optimizer),
        };
        // The variance process is kept at least as smooth as the mean.
        let fit = gp::optimise(
            &log_resid,
            NoiseSpec::Learned,
            Some(mean_fit.params().lengthscale()),
            &var_starts,
            var_opt,
        )?;
        let new_sigma2 = variance_from_log_gp(&fit, data.times());

        // Convergence check.
        let new_phi_mean = mean_fit.log_hyperparameters();
        let new_phi_var = fit.log_hyperparameters();
        let phi_var_prev = phi_var
            .clone()
            .unwrap_or_else(|| log_resid_initial_phi(&log_resid));
        let change = max_abs_diff(&new_phi_mean, &phi_mean)
            .max(max_abs_diff(&new_phi_var, &phi_var_prev))
            .max(max_abs_diff(&new_sigma2, &sigma2));

        phi_mean = new_phi_mean;
        phi_var = Some(new_phi_var);
        sigma2 = new_sigma2;
        var_fit = Some(fit);
        if change < config.tolerance {
            converged = true;
            break;
        }
    }

    let params = gp::KernelParams::new(phi_mean[0].exp(), phi_mean[1].exp())?;
    let mean_fit = GpFit::condition(data, params, sigma2.clone())?;
    let marginal_loglik = mean_fit.log_marginal();
    Ok(HetGpFit {
        mean_fit,
        var_fit: var_fit.expect("at least one iteration runs"),
        sigma2_hat: sigma2,
        iterations,
        converged,
        marginal_loglik,
    })
}

/// Log-variance hyperparameters assumed before the first variance step.
fn log_resid_initial_phi(log_resid: &TimeSeries) -> Vec<f64> {
    gp::default_starts(log_resid, true, DEFAULT_STARTS)[DEFAULT_STARTS / 2].clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseChoice {
    Heteroscedastic,
    Homoscedastic,
}

#[derive(Debug, Clone)]
pub struct ModelChoice {
    pub chosen: NoiseChoice,
    pub het_loglik: f64,
    pub hom_loglik: f64,
    /// The homoscedastic competitor (kernel and noise level fitted jointly).
    pub hom_fit: GpFit,
}

impl ModelChoice {
    pub fn chosen_loglik(&self) -> f64 {
        match self.chosen {
            NoiseChoice::Heteroscedastic => self.het_loglik,
            NoiseChoice::Homoscedastic => self.hom_loglik,
        }
    }

    pub fn rejected_loglik(&self) -> f64 {
        match self.chosen {
            NoiseChoice::Heteroscedastic => self.hom_loglik,
            NoiseChoice::Homoscedastic => self.het_loglik,
        }
    }
}

/// Fit a homoscedastic GP and keep it only if its maximised marginal
/// likelihood beats the heteroscedastic one.
pub fn check_homoscedastic(data: &TimeSeries, het: &HetGpFit) -> Result<ModelChoice> {
    if het.mean_fit.train().times() != data.times() {
        return Err(Error::InvalidInput(
            "heteroscedastic fit was trained on different times".into(),
        ));
    }
    let hom_fit = gp::fit_gp_homoscedastic(data)?;
    let hom_loglik = hom_fit.log_marginal();
    let chosen = if hom_loglik > het.marginal_loglik {
        NoiseChoice::Homoscedastic
    } else {
        NoiseChoice::Heteroscedastic
    };
    Ok(ModelChoice {
        chosen,
        het_loglik: het.marginal_loglik,
        hom_loglik,
        hom_fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::KernelParams;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn noisy_series(n: usize, seed: u64, sd: impl Fn(f64) -> f64) -> TimeSeries {
        let mut rng = crate::rng::seeded(seed);
        let times: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let values = times
            .iter()
            .map(|&t| (t / n as f64 * 3.0).sin() + sd(t) * rng.sample::<f64, _>(StandardNormal))
            .collect();
        TimeSeries::new(times, values).unwrap()
    }

    #[test]
    fn residuals_are_zero_at_exact_fit() {
        let data = TimeSeries::new(vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 1.5]).unwrap();
        let fit = GpFit::condition(&data, KernelParams::new(1.0, 1.0).unwrap(), vec![0.0; 3]).unwrap();
        let r = squared_residuals(&data, &fit);
        assert!(r.iter().all(|v| *v >= 0.0 && *v < 1e-12), "{r:?}");
    }

    #[test]
    fn single_point_residual() {
        // One point: posterior mean at the point is offset + k/(k+σ²)·(y-offset) = y
        // with offset = y, so compare against a fit on different data instead.
        let train = TimeSeries::new(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let fit = GpFit::condition(&train, KernelParams::new(1.0, 1.0).unwrap(), vec![0.1; 2]).unwrap();
        let data = TimeSeries::new(vec![0.0, 1.0], vec![3.0, 1.0]).unwrap();
        let r = squared_residuals(&data, &fit);
        assert!((r[0] - 4.0).abs() < 1e-12);
        assert!(r[1].abs() < 1e-12);
    }

    #[test]
    fn residuals_compose_with_predict() {
        let data = noisy_series(5, 3, |_| 0.3);
        let fit = gp::fit_gp(&data, &[0.09; 5]).unwrap();
        let pred = fit.predict(data.times());
        let r = squared_residuals(&data, &fit);
        for i in 0..5 {
            let expected = (data.values()[i] - pred.mean[i]).powi(2);
            assert_eq!(r[i], expected);
        }
    }

    #[test]
    fn too_few_points() {
        let data = TimeSeries::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert!(matches!(
            fit_hetgp(&data, &HetGpConfig::default()),
            Err(Error::InsufficientData { required: 4, got: 3 })
        ));
    }

    #[test]
    fn iteration_cap_and_infinite_tolerance() {
        let data = noisy_series(40, 9, |t| 0.1 + t / 40.0);
        let capped = fit_hetgp(
            &data,
            &HetGpConfig {
                max_iterations: 1,
                ..HetGpConfig::default()
            },
        )
        .unwrap();
        assert_eq!(capped.iterations, 1);
        assert!(!capped.converged);

        let once = fit_hetgp(
            &data,
            &HetGpConfig {
                tolerance: f64::INFINITY,
                ..HetGpConfig::default()
            },
        )
        .unwrap();
        assert_eq!(once.iterations, 1);
        assert!(once.converged);
        assert_eq!(once.sigma2_hat, capped.sigma2_hat);
    }

    #[test]
    fn variances_positive_and_consistent_with_var_fit() {
        let data = noisy_series(60, 4, |t| 0.05 + 0.02 * t);
        let fit = fit_hetgp(&data, &HetGpConfig::default()).unwrap();
        assert!(fit.iterations <= 20);
        assert!(fit.sigma2_hat.iter().all(|v| *v > 0.0));
        let again = fit.variance_at(data.times());
        for (a, b) in fit.sigma2_hat.iter().zip(&again) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        assert_eq!(fit.mean_fit.noise_variances(), &fit.sigma2_hat[..]);
    }

    #[test]
    fn deterministic() {
        let data = noisy_series(50, 8, |t| 0.1 + 0.01 * t);
        let a = fit_hetgp(&data, &HetGpConfig::default()).unwrap();
        let b = fit_hetgp(&data, &HetGpConfig::default()).unwrap();
        assert_eq!(a.sigma2_hat, b.sigma2_hat);
    }

    #[test]
    fn single_observation_moves_the_variance() {
        let data = noisy_series(30, 2, |_| 0.2);
        let config = HetGpConfig {
            max_iterations: 1,
            ..HetGpConfig::default()
        };
        let base = fit_hetgp(&data, &config).unwrap();
        let mut values = data.values().to_vec();
        values[15] += 2.0;
        let bumped = fit_hetgp(&data.with_values(values).unwrap(), &config).unwrap();
        assert_ne!(base.sigma2_hat[15], bumped.sigma2_hat[15]);
    }

    #[test]
    fn constant_noise_gives_flat_variance() {
        let data = noisy_series(200, 21, |_| 1.0);
        let fit = fit_hetgp(&data, &HetGpConfig::default()).unwrap();
        let max = fit.sigma2_hat.iter().cloned().fold(f64::MIN, f64::max);
        let min = fit.sigma2_hat.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min < 3.0, "max/min = {}", max / min);
    }

    #[test]
    fn selection_rule() {
        let data = noisy_series(60, 12, |t| 0.05 + 0.03 * t);
        let het = fit_hetgp(&data, &HetGpConfig::default()).unwrap();
        let choice = check_homoscedastic(&data, &het).unwrap();
        assert!(choice.chosen_loglik() >= choice.rejected_loglik());
        assert_eq!(choice.chosen, NoiseChoice::Heteroscedastic);
    }
}
