use faer::Mat;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::bayes::diagnostics::{adapt_proposal, gelman_rubin};
use crate::bayes::mh::{mh_sample, proposal_factor, Chain, Target};
use crate::error::{Error, Result};
use crate::optim::NelderMead;
use crate::rng;

/// Acceptance rates outside this window trigger a pilot rescale.
const PILOT_ACCEPTANCE: (f64, f64) = (0.05, 0.7);
const MAX_PILOT_ROUNDS: usize = 8;
/// Chain starts are drawn this many posterior standard deviations out.
const OVERDISPERSION: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub pilot_iterations: usize,
    /// Initial diagonal proposal standard deviation for the pilot.
    pub pilot_scale: f64,
    pub seed: u64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 1000,
            chains: 4,
            pilot_iterations: 2000,
            pilot_scale: 0.1,
            seed: 1,
        }
    }
}

impl SamplerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::InvalidInput(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.chains == 0 {
            return Err(Error::InvalidInput("need at least one chain".into()));
        }
        if self.pilot_iterations < 200 {
            return Err(Error::InvalidInput(format!(
                "pilot needs at least 200 iterations, got {}",
                self.pilot_iterations
            )));
        }
        if !(self.pilot_scale > 0.0 && self.pilot_scale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "pilot scale must be positive, got {}",
                self.pilot_scale
            )));
        }
        Ok(())
    }
}

/// Everything produced by [`sample_posterior`].
#[derive(Debug, Clone)]
pub struct SamplerOutput {
    pub chains: Vec<Chain>,
    /// Proposal covariance used for the main chains.
    pub proposal: Mat<f64>,
    /// Highest-density point found before sampling (sampling scale).
    pub mode: Vec<f64>,
    pub mode_log_density: f64,
    pub pilot_acceptance: f64,
}

impl SamplerOutput {
    /// Post-burn-in draws of every chain, chain by chain.
    pub fn pooled_draws(&self) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .flat_map(|c| c.draws.iter().cloned())
            .collect()
    }

    /// R-hat per parameter; `None` with fewer than two chains.
    pub fn rhat(&self) -> Option<Result<Vec<f64>>> {
        if self.chains.len() < 2 {
            return None;
        }
        let d = self.chains[0].dim();
        Some((0..d).map(|i| gelman_rubin(&self.chains, i)).collect())
    }

    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.chains.iter().map(Chain::acceptance_rate).collect()
    }
}

/// Maximise the target by Nelder–Mead from each start, then polish the best.
pub fn find_mode<T: Target + ?Sized>(target: &T, starts: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    let optimizer = NelderMead {
        max_iterations: 2000,
        tolerance: 1e-8,
        initial_step: 0.5,
    };
    let neg = |u: &[f64]| -target.log_density(u);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in starts {
        if s.len() != target.dim() || !target.log_density(s).is_finite() {
            continue;
        }
        let m = optimizer.minimize(neg, s);
        if m.value.is_finite() && best.as_ref().is_none_or(|b| -m.value > b.1) {
            best = Some((m.point, -m.value));
        }
    }
    let (point, _) = best.ok_or_else(|| {
        Error::OptimizationFailure("no starting point has finite posterior density".into())
    })?;
    let polish = NelderMead {
        initial_step: 0.05,
        ..optimizer
    }
    .minimize(neg, &point);
    Ok((polish.point, -polish.value))
}

/// Pilot-tuned random-walk proposal around `mode`.
///
/// Starts from a diagonal proposal, rescales it until the acceptance rate is
/// workable, then adapts to the pilot covariance twice.
fn tune_proposal<T: Target + ?Sized>(
    target: &T,
    mode: &[f64],
    settings: &SamplerSettings,
) -> Result<(Mat<f64>, f64)> {
    let d = target.dim();
    let n = settings.pilot_iterations;
    let pilot_burn = n / 4;
    let mut scale = settings.pilot_scale;
    let mut round = 0u64;
    let diagonal = |s: f64| Mat::from_fn(d, d, |i, j| if i == j { s * s } else { 0.0 });
    let run = |cov: &Mat<f64>, round: &mut u64| {
        *round += 1;
        mh_sample(
            target,
            mode,
            cov,
            n,
            pilot_burn,
            rng::derive_seed(settings.seed, &[0x9170, *round]),
        )
    };

    let mut pilot = None;
    for _ in 0..MAX_PILOT_ROUNDS {
        let cov = diagonal(scale);
        let chain = run(&cov, &mut round)?;
        let rate = chain.acceptance_rate();
        if rate < PILOT_ACCEPTANCE.0 {
            scale *= 0.2;
        } else if rate > PILOT_ACCEPTANCE.1 {
            scale *= 5.0;
        } else {
            pilot = Some(chain);
            break;
        }
        pilot = Some(chain);
    }
    let pilot = pilot.expect("at least one pilot round");
    let mut cov = match adapt_proposal(&pilot) {
        Ok(c) => c,
        Err(_) => diagonal(scale),
    };

    let mut rate = pilot.acceptance_rate();
    for _ in 0..2 {
        let refined = run(&cov, &mut round)?;
        rate = refined.acceptance_rate();
        match adapt_proposal(&refined) {
            Ok(c) => cov = c,
            Err(_) => {
                cov = Mat::from_fn(d, d, |i, j| 0.1 * cov[(i, j)]);
            }
        }
    }
    Ok((cov, rate))
}

/// Overdispersed start: the mode plus a scaled draw from the posterior
/// covariance implied by the proposal, retried closer in if it lands
/// outside the support.
fn chain_start<T: Target + ?Sized>(
    target: &T,
    mode: &[f64],
    proposal: &Mat<f64>,
    seed: u64,
) -> Result<Vec<f64>> {
    let d = mode.len();
    let shrink = d as f64 / 2.38f64.powi(2);
    let posterior_cov = Mat::from_fn(d, d, |i, j| proposal[(i, j)] * shrink);
    let factor = proposal_factor(&posterior_cov, d)?;
    let mut r = rng::seeded(seed);
    let z: Vec<f64> = (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let step: Vec<f64> = (0..d)
        .map(|i| (0..=i).map(|j| factor[(i, j)] * z[j]).sum())
        .collect();
    let mut spread = OVERDISPERSION;
    for _ in 0..10 {
        let u: Vec<f64> = mode.iter().zip(step.iter()).map(|(m, s)| m + spread * s).collect();
        if target.log_density(&u).is_finite() {
            return Ok(u);
        }
        spread *= 0.5;
    }
    Ok(mode.to_vec())
}

/// Mode search, proposal tuning, then `settings.chains` independent main runs.
pub fn sample_posterior<T: Target + ?Sized>(
    target: &T,
    starts: &[Vec<f64>],
    settings: &SamplerSettings,
) -> Result<SamplerOutput> {
    settings.validate()?;
    let (mode, mode_log_density) = find_mode(target, starts)?;
    let (proposal, pilot_acceptance) = tune_proposal(target, &mode, settings)?;
    let chains = (0..settings.chains as u64)
        .map(|c| {
            let start = chain_start(
                target,
                &mode,
                &proposal,
                rng::derive_seed(settings.seed, &[0x57a7, c]),
            )?;
            mh_sample(
                target,
                &start,
                &proposal,
                settings.iterations,
                settings.burn_in,
                rng::derive_seed(settings.seed, &[0xc4a1, c]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SamplerOutput {
        chains,
        proposal,
        mode,
        mode_log_density,
        pilot_acceptance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::mh::FnTarget;

    /// Correlated, badly scaled Gaussian.
    fn skewed() -> FnTarget<impl Fn(&[f64]) -> f64> {
        FnTarget::new(2, |u: &[f64]| {
            let a = (u[0] - 3.0) / 0.01;
            let b = (u[1] + 1.0 - 50.0 * (u[0] - 3.0)) / 2.0;
            -0.5 * (a * a + b * b)
        })
    }

    fn settings(seed: u64) -> SamplerSettings {
        SamplerSettings {
            iterations: 6000,
            burn_in: 1000,
            chains: 4,
            seed,
            ..SamplerSettings::default()
        }
    }

    #[test]
    fn finds_mode_and_mixes() {
        let out = sample_posterior(&skewed(), &[vec![0.0, 0.0]], &settings(4)).unwrap();
        assert!((out.mode[0] - 3.0).abs() < 1e-4);
        assert!((out.mode[1] + 1.0).abs() < 1e-2);
        for r in out.rhat().unwrap().unwrap() {
            assert!(r < 1.05, "{r}");
        }
        for a in out.acceptance_rates() {
            assert!((0.1..0.6).contains(&a), "{a}");
        }
        let draws = out.pooled_draws();
        let mean0 = draws.iter().map(|d| d[0]).sum::<f64>() / draws.len() as f64;
        assert!((mean0 - 3.0).abs() < 0.002);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = sample_posterior(&skewed(), &[vec![0.0, 0.0]], &settings(9)).unwrap();
        let b = sample_posterior(&skewed(), &[vec![0.0, 0.0]], &settings(9)).unwrap();
        assert_eq!(a.chains, b.chains);
        let c = sample_posterior(&skewed(), &[vec![0.0, 0.0]], &settings(10)).unwrap();
        assert_ne!(a.chains[0].draws, c.chains[0].draws);
        assert_ne!(a.chains[0].draws, a.chains[1].draws);
    }

    #[test]
    fn no_finite_start_is_an_error() {
        let t = FnTarget::new(1, |_: &[f64]| f64::NEG_INFINITY);
        assert!(sample_posterior(&t, &[vec![0.0]], &settings(1)).is_err());
    }

    #[test]
    fn settings_validation() {
        let mut s = SamplerSettings::default();
        s.burn_in = s.iterations;
        assert!(s.validate().is_err());
        assert!(SamplerSettings { chains: 0, ..Default::default() }.validate().is_err());
    }
}
