use crate::bayes::likelihood::{gaussian_log_likelihood, SigmaField};
use crate::bayes::mh::Target;
use crate::bayes::prior::PriorSpec;
use crate::data::{mean, TimeSeries};
use crate::error::{Error, Result};
use crate::ode::{
    self, LogisticParams, ModelKind, OdeModel, RichardsParams, SirParams, DEFAULT_SIR_STEP,
    SIR_RECOVERY_RATE,
};

/// Name of the sampled observation-noise scale.
pub const NOISE_SCALE: &str = "sigma";

/// Time at which the square-root noise law has standard deviation `σ`.
pub const SQRT_TIME_REFERENCE: f64 = 100.0;

/// Which ODE is sampled, and the parameters held fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelTemplate {
    pub kind: ModelKind,
    /// Initial condition for the growth models.
    pub c0: f64,
    /// SIR recovery rate.
    pub delta: f64,
    /// SIR integration step.
    pub sir_step: f64,
}

impl ModelTemplate {
    pub fn logistic(c0: f64) -> Self {
        Self {
            kind: ModelKind::Logistic,
            c0,
            delta: SIR_RECOVERY_RATE,
            sir_step: DEFAULT_SIR_STEP,
        }
    }

    pub fn richards(c0: f64) -> Self {
        Self {
            kind: ModelKind::Richards,
            ..Self::logistic(c0)
        }
    }

    pub fn sir(delta: f64) -> Self {
        Self {
            kind: ModelKind::Sir,
            c0: 0.0,
            delta,
            sir_step: DEFAULT_SIR_STEP,
        }
    }

    /// Sampled ODE parameters, in order.
    pub fn parameter_names(&self) -> &'static [&'static str] {
        match self.kind {
            ModelKind::Logistic => &["r", "K"],
            ModelKind::Richards => &["alpha", "gamma", "K"],
            ModelKind::Sir => &["beta", "S0", "I0"],
        }
    }

    pub fn dim(&self) -> usize {
        self.parameter_names().len()
    }

    pub fn build(&self, theta: &[f64]) -> Result<OdeModel> {
        if theta.len() < self.dim() {
            return Err(Error::InvalidInput(format!(
                "{} needs {} parameters, got {}",
                self.kind,
                self.dim(),
                theta.len()
            )));
        }
        let model = match self.kind {
            ModelKind::Logistic => OdeModel::Logistic(LogisticParams {
                r: theta[0],
                k: theta[1],
                c0: self.c0,
            }),
            ModelKind::Richards => OdeModel::Richards(RichardsParams {
                alpha: theta[0],
                gamma: theta[1],
                k: theta[2],
                c0: self.c0,
            }),
            ModelKind::Sir => OdeModel::Sir(SirParams {
                beta: theta[0],
                s0: theta[1],
                i0: theta[2],
                delta: self.delta,
            }),
        };
        model.validate()?;
        Ok(model)
    }

    /// Observed model output at `times`.
    pub fn observed(&self, theta: &[f64], times: &[f64]) -> Result<Vec<f64>> {
        let model = self.build(theta)?;
        Ok(ode::solve_with_step(&model, times, self.sir_step)?
            .observed()
            .to_vec())
    }

    /// Rough parameter guesses read off the data, used to seed the mode
    /// search. Several are returned so the search can pick the best.
    pub fn initial_guesses(&self, data: &TimeSeries) -> Vec<Vec<f64>> {
        let t = data.times();
        let y = data.values();
        let n = y.len();
        let tail = &y[n - (n / 5).max(1)..];
        let plateau = mean(tail).max(f64::MIN_POSITIVE);
        let first_above = |level: f64| {
            t.iter()
                .zip(y)
                .find(|(_, v)| **v >= level)
                .map(|(t, _)| *t)
                .unwrap_or(t[n / 2])
                .max(t[0] + 1e-9)
        };
        match self.kind {
            ModelKind::Logistic | ModelKind::Richards => {
                let k = plateau.max(self.c0 * 1.05);
                let k = if self.kind == ModelKind::Richards {
                    k.min(99.9)
                } else {
                    k
                };
                let half = first_above(0.5 * (k + self.c0));
                let span = (half - t[0].min(0.0)).max(1e-9);
                let rate = ((k - self.c0) / self.c0).abs().ln().abs().max(0.1) / span;
                let mut out = Vec::new();
                for rf in [0.5, 1.0, 2.0] {
                    for kf in [0.9, 1.0, 1.1] {
                        let kk = if self.kind == ModelKind::Richards {
                            (k * kf).min(99.9)
                        } else {
                            k * kf
                        };
                        match self.kind {
                            ModelKind::Logistic => out.push(vec![rate * rf, kk]),
                            _ => {
                                for gamma in [0.5, 1.0, 2.0] {
                                    out.push(vec![rate * rf, gamma, kk]);
                                }
                            }
                        }
                    }
                }
                out
            }
            ModelKind::Sir => {
                let peak = y.iter().cloned().fold(f64::MIN, f64::max).max(1e-6);
                let i0 = y[0].max(1e-3 * peak);
                [1.5, 2.0, 3.0, 5.0, 8.0, 12.0]
                    .iter()
                    .map(|&r0: &f64| {
                        let frac = 1.0 - (1.0 + r0.ln()) / r0;
                        let s0 = peak / frac;
                        vec![r0 * self.delta / s0, s0, i0]
                    })
                    .collect()
            }
        }
    }
}

/// How observation variances enter the likelihood.
#[derive(Debug, Clone)]
pub enum NoiseModel {
    /// Variances fixed in advance (the HetGP estimate); nothing extra sampled.
    Estimated(SigmaField),
    /// One constant `σ`, sampled as the last parameter.
    Constant,
    /// `σ_t = σ √(t / 100)`, with `σ` sampled unless fixed.
    SqrtTime { fixed_scale: Option<f64> },
}

impl NoiseModel {
    pub fn samples_scale(&self) -> bool {
        matches!(
            self,
            NoiseModel::Constant | NoiseModel::SqrtTime { fixed_scale: None }
        )
    }

    /// Observation variances at `times`. `theta` is the full sampled vector
    /// (its last entry is `σ` when the scale is sampled).
    pub fn variances_at(&self, times: &[f64], theta: &[f64]) -> Vec<f64> {
        match self {
            NoiseModel::Estimated(field) => field.variances_at(times),
            NoiseModel::Constant => {
                let s = theta[theta.len() - 1];
                vec![s * s; times.len()]
            }
            NoiseModel::SqrtTime { fixed_scale } => {
                let s = fixed_scale.unwrap_or_else(|| theta[theta.len() - 1]);
                times
                    .iter()
                    .map(|t| s * s * t / SQRT_TIME_REFERENCE)
                    .collect()
            }
        }
    }
}

/// Posterior over ODE parameters (plus `σ` where sampled) on the
/// unconstrained sampling scale.
#[derive(Debug, Clone)]
pub struct Posterior {
    data: TimeSeries,
    template: ModelTemplate,
    noise: NoiseModel,
    priors: PriorSpec,
}

impl Posterior {
    pub fn new(
        data: TimeSeries,
        template: ModelTemplate,
        noise: NoiseModel,
        priors: PriorSpec,
    ) -> Result<Self> {
        let mut expected: Vec<String> = template
            .parameter_names()
            .iter()
            .map(|s| s.to_string())
            .collect();
        if noise.samples_scale() {
            expected.push(NOISE_SCALE.to_string());
        }
        if priors.names() != expected {
            return Err(Error::InvalidInput(format!(
                "priors must cover exactly {:?} in that order, got {:?}",
                expected,
                priors.names()
            )));
        }
        if let NoiseModel::Estimated(field) = &noise {
            if field.at_obs().len() != data.len() {
                return Err(Error::InvalidInput(format!(
                    "{} estimated variances for {} observations",
                    field.at_obs().len(),
                    data.len()
                )));
            }
        }
        if let NoiseModel::SqrtTime { .. } = noise {
            if data.times().iter().any(|t| *t <= 0.0) {
                return Err(Error::InvalidInput(
                    "square-root noise law needs strictly positive times".into(),
                ));
            }
        }
        Ok(Self {
            data,
            template,
            noise,
            priors,
        })
    }

    pub fn data(&self) -> &TimeSeries {
        &self.data
    }

    pub fn template(&self) -> &ModelTemplate {
        &self.template
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn priors(&self) -> &PriorSpec {
        &self.priors
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.priors.names()
    }

    /// Log-likelihood at original-scale parameters.
    pub fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        let predicted = self.template.observed(theta, self.data.times())?;
        let y = self.data.values();
        Ok(match &self.noise {
            NoiseModel::Estimated(field) => {
                gaussian_log_likelihood(y, &predicted, field.at_obs().iter().copied())
            }
            NoiseModel::Constant => {
                let s = theta[theta.len() - 1];
                gaussian_log_likelihood(y, &predicted, std::iter::repeat(s * s))
            }
            NoiseModel::SqrtTime { fixed_scale } => {
                let s = fixed_scale.unwrap_or_else(|| theta[theta.len() - 1]);
                let s2 = s * s / SQRT_TIME_REFERENCE;
                gaussian_log_likelihood(y, &predicted, self.data.times().iter().map(|t| s2 * t))
            }
        })
    }

    /// Sampling-scale starting points built from [`ModelTemplate::initial_guesses`],
    /// pulled inside the prior support.
    pub fn initial_points(&self) -> Vec<Vec<f64>> {
        self.template
            .initial_guesses(&self.data)
            .into_iter()
            .filter_map(|mut theta| {
                if self.noise.samples_scale() {
                    let predicted = self.template.observed(&theta, self.data.times()).ok()?;
                    let scale = match self.noise {
                        NoiseModel::SqrtTime { .. } => self
                            .data
                            .iter()
                            .zip(&predicted)
                            .map(|((t, y), m)| (y - m).powi(2) * SQRT_TIME_REFERENCE / t)
                            .sum::<f64>(),
                        _ => self
                            .data
                            .values()
                            .iter()
                            .zip(&predicted)
                            .map(|(y, m)| (y - m).powi(2))
                            .sum::<f64>(),
                    };
                    theta.push((scale / self.data.len() as f64).sqrt().max(1e-6));
                }
                let inside: Vec<f64> = self
                    .priors
                    .entries()
                    .iter()
                    .zip(theta)
                    .map(|(p, x)| match p.transform {
                        crate::bayes::Transform::Logit { lower, upper } => {
                            let w = upper - lower;
                            x.clamp(lower + 1e-6 * w, upper - 1e-6 * w)
                        }
                        crate::bayes::Transform::Log => x.max(1e-300),
                        crate::bayes::Transform::Identity => x,
                    })
                    .collect();
                self.priors.to_transformed(&inside).ok()
            })
            .collect()
    }
}

/// Log-likelihood + log-prior + log-Jacobian at sampling-scale `u`;
/// `-inf` outside the prior support or when the model cannot be evaluated.
pub fn log_posterior(theta_transformed: &[f64], posterior: &Posterior) -> f64 {
    if theta_transformed.len() != posterior.priors.len()
        || theta_transformed.iter().any(|u| !u.is_finite())
    {
        return f64::NEG_INFINITY;
    }
    let theta = posterior.priors.to_original(theta_transformed);
    if !posterior.priors.in_support(&theta) {
        return f64::NEG_INFINITY;
    }
    let prior = posterior.priors.log_density_transformed(theta_transformed);
    if !prior.is_finite() {
        return f64::NEG_INFINITY;
    }
    match posterior.log_likelihood(&theta) {
        Ok(ll) if ll.is_finite() => ll + prior,
        _ => f64::NEG_INFINITY,
    }
}

impl Target for Posterior {
    fn dim(&self) -> usize {
        self.priors.len()
    }

    fn log_density(&self, u: &[f64]) -> f64 {
        log_posterior(u, self)
    }

    fn to_original(&self, u: &[f64]) -> Vec<f64> {
        self.priors.to_original(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::likelihood::{hetero_log_likelihood, homo_log_likelihood};
    use crate::bayes::prior::ParameterPrior;

    fn logistic_data() -> TimeSeries {
        let t: Vec<f64> = (1..=20).map(|i| i as f64 * 200.0).collect();
        let template = ModelTemplate::logistic(0.7);
        let y = template.observed(&[0.0025, 80.0], &t).unwrap();
        TimeSeries::new(t, y).unwrap()
    }

    fn priors(with_sigma: bool) -> PriorSpec {
        let mut e = vec![
            ParameterPrior::uniform("r", 0.001, 1.0),
            ParameterPrior::uniform("K", 10.0, 100.0),
        ];
        if with_sigma {
            e.push(ParameterPrior::uniform("sigma", 1.0, 20.0));
        }
        PriorSpec::new(e).unwrap()
    }

    #[test]
    fn prior_names_must_match_layout() {
        let data = logistic_data();
        let t = ModelTemplate::logistic(0.7);
        assert!(Posterior::new(data.clone(), t, NoiseModel::Constant, priors(false)).is_err());
        assert!(Posterior::new(data.clone(), t, NoiseModel::Constant, priors(true)).is_ok());
        let field = SigmaField::constant(data.len(), 1.0).unwrap();
        assert!(Posterior::new(data, t, NoiseModel::Estimated(field), priors(false)).is_ok());
    }

    #[test]
    fn posterior_is_likelihood_plus_prior_plus_jacobian() {
        let data = logistic_data();
        let t = ModelTemplate::logistic(0.7);
        let post = Posterior::new(data.clone(), t, NoiseModel::Constant, priors(true)).unwrap();
        let theta = [0.003, 75.0, 4.0];
        let u = post.priors().to_transformed(&theta).unwrap();
        let model = t.build(&theta).unwrap();
        let ll = homo_log_likelihood(&data, &model, 16.0).unwrap();
        let lp = post.priors().log_density_transformed(&u);
        let got = log_posterior(&u, &post);
        assert!((got - (ll + lp)).abs() < 1e-9 * got.abs());
    }

    #[test]
    fn estimated_noise_uses_hetero_likelihood() {
        let data = logistic_data();
        let t = ModelTemplate::logistic(0.7);
        let v: Vec<f64> = (0..data.len()).map(|i| 0.5 + i as f64).collect();
        let field = SigmaField::interpolated(data.times().to_vec(), v).unwrap();
        let post = Posterior::new(data.clone(), t, NoiseModel::Estimated(field.clone()), priors(false)).unwrap();
        let theta = [0.002, 85.0];
        let expected = hetero_log_likelihood(&data, &t.build(&theta).unwrap(), &field).unwrap();
        assert!((post.log_likelihood(&theta).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn sqrt_time_law() {
        let noise = NoiseModel::SqrtTime { fixed_scale: Some(2.3) };
        let v = noise.variances_at(&[100.0, 400.0], &[]);
        assert!((v[0].sqrt() - 2.3).abs() < 1e-12);
        assert!((v[1].sqrt() - 4.6).abs() < 1e-12);
        assert!(!noise.samples_scale());
        assert!(NoiseModel::SqrtTime { fixed_scale: None }.samples_scale());
    }

    #[test]
    fn invalid_models_are_rejected_not_errors() {
        let data = logistic_data();
        let rich = ModelTemplate::richards(5.0);
        let p = PriorSpec::new(vec![
            ParameterPrior::uniform("alpha", 0.0, 1.0),
            ParameterPrior::exponential("gamma", 1.0),
            ParameterPrior::uniform("K", 0.0, 100.0),
        ])
        .unwrap();
        let field = SigmaField::constant(data.len(), 1.0).unwrap();
        let post = Posterior::new(data, rich, NoiseModel::Estimated(field), p).unwrap();
        // K below C0 is inside the prior but not a valid model.
        let u = post.priors().to_transformed(&[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(log_posterior(&u, &post), f64::NEG_INFINITY);
    }

    #[test]
    fn initial_points_are_finite() {
        let data = logistic_data();
        let post = Posterior::new(data, ModelTemplate::logistic(0.7), NoiseModel::Constant, priors(true)).unwrap();
        let pts = post.initial_points();
        assert!(!pts.is_empty());
        assert!(pts.iter().any(|u| log_posterior(u, &post).is_finite()));
    }
}
