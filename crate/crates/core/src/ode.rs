//! Forward models: closed-form logistic and Richards growth curves and a
//! fixed-step RK4 integrator for the two-state SIR system.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Recovery rate for weekly data with a five-day infectious period.
pub const SIR_RECOVERY_RATE: f64 = 7.0 / 5.0;

/// Default RK4 step for the SIR system, in the data's time unit.
pub const DEFAULT_SIR_STEP: f64 = 0.01;

/// Tolerated negative excursion of S or I before the integration is
/// declared under-resolved.
const NEGATIVE_STATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Logistic,
    Richards,
    Sir,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Richards => "richards",
            ModelKind::Sir => "sir",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logistic" => Ok(ModelKind::Logistic),
            "richards" => Ok(ModelKind::Richards),
            "sir" => Ok(ModelKind::Sir),
            other => Err(Error::InvalidInput(format!("unknown model `{other}`"))),
        }
    }
}

/// `dC/dt = rC(1 - C/K)`, `C(0) = C₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticParams {
    pub r: f64,
    pub k: f64,
    pub c0: f64,
}

/// Generalised logistic growth with shape `γ`, `C(0) = C₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RichardsParams {
    pub alpha: f64,
    pub gamma: f64,
    pub k: f64,
    pub c0: f64,
}

/// `dS/dt = -βSI`, `dI/dt = βSI - δI`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirParams {
    pub beta: f64,
    pub s0: f64,
    pub i0: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OdeModel {
    Logistic(LogisticParams),
    Richards(RichardsParams),
    Sir(SirParams),
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameters(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameters(format!(
            "{name} must be nonnegative, got {v}"
        )))
    }
}

impl OdeModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            OdeModel::Logistic(_) => ModelKind::Logistic,
            OdeModel::Richards(_) => ModelKind::Richards,
            OdeModel::Sir(_) => ModelKind::Sir,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            OdeModel::Logistic(p) => {
                positive("r", p.r)?;
                positive("K", p.k)?;
                positive("C0", p.c0)
            }
            OdeModel::Richards(p) => {
                positive("alpha", p.alpha)?;
                positive("gamma", p.gamma)?;
                positive("K", p.k)?;
                positive("C0", p.c0)?;
                if p.k > 100.0 {
                    return Err(Error::InvalidParameters(format!(
                        "K is a percentage and must be at most 100, got {}",
                        p.k
                    )));
                }
                if p.c0 >= p.k {
                    return Err(Error::InvalidParameters(format!(
                        "C0 ({}) must lie below K ({})",
                        p.c0, p.k
                    )));
                }
                Ok(())
            }
            OdeModel::Sir(p) => {
                nonnegative("beta", p.beta)?;
                nonnegative("S0", p.s0)?;
                nonnegative("I0", p.i0)?;
                positive("delta", p.delta)
            }
        }
    }
}

/// Model states and observed quantity at each requested time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<f64>,
    state_dim: usize,
    observed: Vec<f64>,
}

impl Trajectory {
    fn scalar(times: &[f64], values: Vec<f64>) -> Self {
        Self {
            times: times.to_vec(),
            states: values.clone(),
            state_dim: 1,
            observed: values,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// State vector at row `i`.
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    /// Observation map applied per row: the curve itself for growth models,
    /// the infected compartment for SIR.
    pub fn observed(&self) -> &[f64] {
        &self.observed
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// `C(t) = K C₀ / ((K - C₀) e^{-rt} + C₀)`
pub fn logistic_solution(theta: &LogisticParams, times: &[f64]) -> Result<Trajectory> {
    OdeModel::Logistic(*theta).validate()?;
    let LogisticParams { r, k, c0 } = *theta;
    let values = times
        .iter()
        .map(|&t| (k * c0 / ((k - c0) * (-r * t).exp() + c0)).min(k.max(c0)))
        .collect();
    Ok(Trajectory::scalar(times, values))
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `C(t) = K [1 + ((K/C₀)^γ - 1) e^{-αt}]^{-1/γ}`, evaluated as
/// `C₀ [(C₀/K)^γ (1 - e^{-αt}) + e^{-αt}]^{-1/γ}` in log space so large `γ`
/// cannot overflow and `C(0) = C₀` exactly.
pub fn richards_solution(theta: &RichardsParams, times: &[f64]) -> Result<Trajectory> {
    OdeModel::Richards(*theta).validate()?;
    let RichardsParams {
        alpha,
        gamma,
        k,
        c0,
    } = *theta;
    let log_ratio = gamma * (c0 / k).ln();
    let values = times
        .iter()
        .map(|&t| {
            let decay = -alpha * t;
            let grown = (-(decay.exp_m1())).ln();
            let log_bracket = log_add_exp(log_ratio + grown, decay);
            (c0 * (-log_bracket / gamma).exp()).min(k)
        })
        .collect();
    Ok(Trajectory::scalar(times, values))
}

fn sir_rhs(beta: f64, delta: f64, s: f64, i: f64) -> (f64, f64) {
    let infection = beta * s * i;
    (-infection, infection - delta * i)
}

fn rk4_step(beta: f64, delta: f64, s: f64, i: f64, h: f64) -> (f64, f64) {
    let (k1s, k1i) = sir_rhs(beta, delta, s, i);
    let (k2s, k2i) = sir_rhs(beta, delta, s + 0.5 * h * k1s, i + 0.5 * h * k1i);
    let (k3s, k3i) = sir_rhs(beta, delta, s + 0.5 * h * k2s, i + 0.5 * h * k2i);
    let (k4s, k4i) = sir_rhs(beta, delta, s + h * k3s, i + h * k3i);
    (
        s + h / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s),
        i + h / 6.0 * (k1i + 2.0 * k2i + 2.0 * k3i + k4i),
    )
}

/// Integrate the SIR system from `t = 0` with classical RK4.
///
/// Between consecutive output times the interval is split into the fewest
/// equal substeps no longer than `step`, so every output lands exactly on a
/// step boundary. Requested times must be nonnegative and nondecreasing.
pub fn sir_solve(theta: &SirParams, times: &[f64], step: f64) -> Result<Trajectory> {
    OdeModel::Sir(*theta).validate()?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "step must be positive, got {step}"
        )));
    }
    let SirParams {
        beta,
        s0,
        i0,
        delta,
    } = *theta;
    let mut states = Vec::with_capacity(2 * times.len());
    let mut observed = Vec::with_capacity(times.len());
    let (mut s, mut i) = (s0, i0);
    let mut now = 0.0;
    for &target in times {
        if !(target >= now) {
            return Err(Error::InvalidInput(format!(
                "SIR output times must be nonnegative and nondecreasing, got {target} after {now}"
            )));
        }
        let span = target - now;
        let substeps = (span / step - 1e-9).ceil().max(0.0) as usize;
        if substeps > 0 {
            let h = span / substeps as f64;
            for k in 0..substeps {
                (s, i) = rk4_step(beta, delta, s, i, h);
                if s < -NEGATIVE_STATE_TOLERANCE || i < -NEGATIVE_STATE_TOLERANCE {
                    let (state, value) = if s < i { ("S", s) } else { ("I", i) };
                    return Err(Error::StepTooLarge {
                        state,
                        value,
                        time: now + (k + 1) as f64 * h,
                    });
                }
            }
        }
        now = target;
        s = s.max(0.0);
        i = i.max(0.0);
        states.push(s);
        states.push(i);
        observed.push(i);
    }
    Ok(Trajectory {
        times: times.to_vec(),
        states,
        state_dim: 2,
        observed,
    })
}

/// Evaluate `model` at `times`, using the default SIR step.
pub fn solve(model: &OdeModel, times: &[f64]) -> Result<Trajectory> {
    solve_with_step(model, times, DEFAULT_SIR_STEP)
}

pub fn solve_with_step(model: &OdeModel, times: &[f64], step: f64) -> Result<Trajectory> {
    match model {
        OdeModel::Logistic(p) => logistic_solution(p, times),
        OdeModel::Richards(p) => richards_solution(p, times),
        OdeModel::Sir(p) => sir_solve(p, times, step),
    }
}
