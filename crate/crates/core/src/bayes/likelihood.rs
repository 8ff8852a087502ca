use crate::data::TimeSeries;
use crate::error::{Error, Result};
use crate::gp::GpFit;
use crate::hetgp::{variance_from_log_gp, HetGpFit};
use crate::ode::{self, OdeModel};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Source of observation variances away from the observation times.
#[derive(Debug, Clone)]
pub enum VariancePredictor {
    Constant(f64),
    /// `exp` of a log-variance GP posterior mean.
    LogGp(Box<GpFit>),
    /// Piecewise-linear between knots, flat beyond the ends.
    Interpolated { times: Vec<f64>, variances: Vec<f64> },
}

/// Observation variances: fixed values at the observation times plus a rule
/// for evaluating the variance anywhere else.
#[derive(Debug, Clone)]
pub struct SigmaField {
    at_obs: Vec<f64>,
    predictor: VariancePredictor,
}

fn check_positive(vs: &[f64]) -> Result<()> {
    if let Some(v) = vs.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "observation variances must be positive and finite, got {v}"
        )));
    }
    Ok(())
}

impl SigmaField {
    pub fn constant(n: usize, variance: f64) -> Result<Self> {
        check_positive(&[variance])?;
        Ok(Self {
            at_obs: vec![variance; n],
            predictor: VariancePredictor::Constant(variance),
        })
    }

    pub fn from_hetgp(fit: &HetGpFit) -> Self {
        Self {
            at_obs: fit.sigma2_hat.clone(),
            predictor: VariancePredictor::LogGp(Box::new(fit.var_fit.clone())),
        }
    }

    /// Knots double as the observation-time values, so `times` must be the
    /// data's times.
    pub fn interpolated(times: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if times.len() != variances.len() || times.is_empty() {
            return Err(Error::InvalidInput(
                "variance knots need matching, nonempty times and values".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::InvalidInput(
                "variance knot times must be nondecreasing".into(),
            ));
        }
        check_positive(&variances)?;
        Ok(Self {
            at_obs: variances.clone(),
            predictor: VariancePredictor::Interpolated { times, variances },
        })
    }

    pub fn at_obs(&self) -> &[f64] {
        &self.at_obs
    }

    pub fn predictor(&self) -> &VariancePredictor {
        &self.predictor
    }

    pub fn variances_at(&self, times: &[f64]) -> Vec<f64> {
        match &self.predictor {
            VariancePredictor::Constant(v) => vec![*v; times.len()],
            VariancePredictor::LogGp(fit) => variance_from_log_gp(fit, times),
            VariancePredictor::Interpolated {
                times: knots,
                variances,
            } => times
                .iter()
                .map(|&t| interpolate(knots, variances, t))
                .collect(),
        }
    }
}

fn interpolate(knots: &[f64], values: &[f64], t: f64) -> f64 {
    let last = knots.len() - 1;
    if t <= knots[0] {
        return values[0];
    }
    if t >= knots[last] {
        return values[last];
    }
    let hi = knots.partition_point(|&k| k <= t);
    let lo = hi - 1;
    let span = knots[hi] - knots[lo];
    if span == 0.0 {
        return values[hi];
    }
    let w = (t - knots[lo]) / span;
    values[lo] * (1.0 - w) + values[hi] * w
}

/// `-½ Σ [ln(2π vᵢ) + (yᵢ - mᵢ)² / vᵢ]`
pub(crate) fn gaussian_log_likelihood(
    observed: &[f64],
    predicted: &[f64],
    variances: impl Iterator<Item = f64>,
) -> f64 {
    -0.5 * observed
        .iter()
        .zip(predicted)
        .zip(variances)
        .map(|((y, m), v)| (LN_2PI + v.ln()) + (y - m).powi(2) / v)
        .sum::<f64>()
}

fn model_output(data: &TimeSeries, model: &OdeModel) -> Result<Vec<f64>> {
    Ok(ode::solve(model, data.times())?.observed().to_vec())
}

/// Gaussian log-likelihood with a per-observation variance `σ̂²(tᵢ)`.
pub fn hetero_log_likelihood(
    data: &TimeSeries,
    model: &OdeModel,
    sigma: &SigmaField,
) -> Result<f64> {
    if sigma.at_obs.len() != data.len() {
        return Err(Error::InvalidInput(format!(
            "{} variances for {} observations",
            sigma.at_obs.len(),
            data.len()
        )));
    }
    let predicted = model_output(data, model)?;
    Ok(gaussian_log_likelihood(
        data.values(),
        &predicted,
        sigma.at_obs.iter().copied(),
    ))
}

/// Gaussian log-likelihood with one shared variance.
pub fn homo_log_likelihood(data: &TimeSeries, model: &OdeModel, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidParameters(format!(
            "variance must be positive, got {sigma2}"
        )));
    }
    let predicted = model_output(data, model)?;
    Ok(gaussian_log_likelihood(
        data.values(),
        &predicted,
        std::iter::repeat(sigma2),
    ))
}
