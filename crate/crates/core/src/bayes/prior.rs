use std::fmt;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    /// Flat on `[lower, upper]` in the original scale.
    Uniform { lower: f64, upper: f64 },
    /// `rate · exp(-rate·θ)` on `θ > 0`.
    Exponential { rate: f64 },
    /// Normal density on the *sampling* scale (after the transform).
    Gaussian { mean: f64, variance: f64 },
}

/// Map from the original parameter to the unconstrained sampling scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Logit { lower: f64, upper: f64 },
    Log,
    Identity,
}

fn log_sigmoid(u: f64) -> f64 {
    // -softplus(-u)
    if u > 0.0 {
        -(-u).exp().ln_1p()
    } else {
        u - u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl Transform {
    pub fn inverse(&self, u: f64) -> f64 {
        match *self {
            Transform::Logit { lower, upper } => lower + (upper - lower) * sigmoid(u),
            Transform::Log => u.exp(),
            Transform::Identity => u,
        }
    }

    pub fn forward(&self, theta: f64) -> Result<f64> {
        let out_of_range = || {
            Error::InvalidParameters(format!("{theta} is outside the domain of {self}"))
        };
        match *self {
            Transform::Logit { lower, upper } => {
                if !(theta > lower && theta < upper) {
                    return Err(out_of_range());
                }
                let p = (theta - lower) / (upper - lower);
                Ok((p / (1.0 - p)).ln())
            }
            Transform::Log => {
                if !(theta > 0.0) {
                    return Err(out_of_range());
                }
                Ok(theta.ln())
            }
            Transform::Identity => Ok(theta),
        }
    }

    /// `ln |dθ/du|` at sampling-scale value `u`.
    pub fn log_abs_jacobian(&self, u: f64) -> f64 {
        match *self {
            Transform::Logit { lower, upper } => {
                (upper - lower).ln() + log_sigmoid(u) + log_sigmoid(-u)
            }
            Transform::Log => u,
            Transform::Identity => 0.0,
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Logit { lower, upper } => write!(f, "logit({lower}, {upper})"),
            Transform::Log => f.write_str("log"),
            Transform::Identity => f.write_str("identity"),
        }
    }
}

impl fmt::Display for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prior::Uniform { lower, upper } => write!(f, "uniform({lower}, {upper})"),
            Prior::Exponential { rate } => write!(f, "exponential({rate})"),
            Prior::Gaussian { mean, variance } => write!(f, "gaussian({mean}, {variance})"),
        }
    }
}

/// Prior and sampling transform for one named parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterPrior {
    pub name: String,
    pub prior: Prior,
    pub transform: Transform,
}

impl ParameterPrior {
    /// Uniform prior sampled through a logit over the same bounds.
    pub fn uniform(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            prior: Prior::Uniform { lower, upper },
            transform: Transform::Logit { lower, upper },
        }
    }

    /// Exponential prior sampled on the log scale.
    pub fn exponential(name: impl Into<String>, rate: f64) -> Self {
        Self {
            name: name.into(),
            prior: Prior::Exponential { rate },
            transform: Transform::Log,
        }
    }

    /// Normal prior placed directly on `ln θ`.
    pub fn log_normal(name: impl Into<String>, mean: f64, variance: f64) -> Self {
        Self {
            name: name.into(),
            prior: Prior::Gaussian { mean, variance },
            transform: Transform::Log,
        }
    }

    /// Normal prior on `θ` itself.
    pub fn gaussian(name: impl Into<String>, mean: f64, variance: f64) -> Self {
        Self {
            name: name.into(),
            prior: Prior::Gaussian { mean, variance },
            transform: Transform::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameters(format!("{}: {msg}", self.name)));
        match (self.prior, self.transform) {
            (Prior::Uniform { lower, upper }, Transform::Logit { lower: a, upper: b }) => {
                if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                    return bad(format!("uniform bounds need lower < upper, got ({lower}, {upper})"));
                }
                if a != lower || b != upper {
                    return bad("logit bounds must match the uniform bounds".into());
                }
                Ok(())
            }
            (Prior::Exponential { rate }, Transform::Log) => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return bad(format!("exponential rate must be positive, got {rate}"));
                }
                Ok(())
            }
            (Prior::Gaussian { mean, variance }, Transform::Log | Transform::Identity) => {
                if !(mean.is_finite() && variance > 0.0 && variance.is_finite()) {
                    return bad(format!("gaussian needs finite mean and positive variance, got ({mean}, {variance})"));
                }
                Ok(())
            }
            (p, t) => bad(format!("prior {p} cannot be sampled through transform {t}")),
        }
    }

    pub fn in_support(&self, theta: f64) -> bool {
        match (self.prior, self.transform) {
            (Prior::Uniform { lower, upper }, _) => theta >= lower && theta <= upper,
            (_, Transform::Log) => theta > 0.0,
            _ => theta.is_finite(),
        }
    }

    /// Log prior density of the sampling-scale value `u`, including the
    /// change-of-variables term where the prior is stated on `θ`.
    pub fn log_density_transformed(&self, u: f64) -> f64 {
        if !u.is_finite() {
            return f64::NEG_INFINITY;
        }
        match self.prior {
            Prior::Uniform { lower, upper } => {
                -(upper - lower).ln() + self.transform.log_abs_jacobian(u)
            }
            Prior::Exponential { rate } => {
                let theta = self.transform.inverse(u);
                rate.ln() - rate * theta + self.transform.log_abs_jacobian(u)
            }
            // Stated on the sampling scale already.
            Prior::Gaussian { mean, variance } => {
                -0.5 * (LN_2PI + variance.ln() + (u - mean).powi(2) / variance)
            }
        }
    }
}

/// Ordered priors, one per sampled parameter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriorSpec {
    entries: Vec<ParameterPrior>,
}

impl PriorSpec {
    pub fn new(entries: Vec<ParameterPrior>) -> Result<Self> {
        for e in &entries {
            e.validate()?;
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ParameterPrior] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&ParameterPrior> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_original(&self, u: &[f64]) -> Vec<f64> {
        self.entries
            .iter()
            .zip(u)
            .map(|(e, &x)| e.transform.inverse(x))
            .collect()
    }

    pub fn to_transformed(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.entries
            .iter()
            .zip(theta)
            .map(|(e, &x)| e.transform.forward(x))
            .collect()
    }

    pub fn in_support(&self, theta: &[f64]) -> bool {
        self.entries
            .iter()
            .zip(theta)
            .all(|(e, &x)| e.in_support(x))
    }

    pub fn log_density_transformed(&self, u: &[f64]) -> f64 {
        self.entries
            .iter()
            .zip(u)
            .map(|(e, &x)| e.log_density_transformed(x))
            .sum()
    }
}
