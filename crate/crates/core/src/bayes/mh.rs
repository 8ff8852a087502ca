use faer::{Mat, Side};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

/// Log density on an unconstrained sampling scale.
pub trait Target {
    fn dim(&self) -> usize;

    /// May return `-inf` to reject a point outright.
    fn log_density(&self, u: &[f64]) -> f64;

    /// Map a sampling-scale point to the parameters reported to the user.
    fn to_original(&self, u: &[f64]) -> Vec<f64> {
        u.to_vec()
    }
}

/// Wraps a closure as a [`Target`] whose sampling scale is the original scale.
pub struct FnTarget<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64> FnTarget<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64> Target for FnTarget<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, u: &[f64]) -> f64 {
        (self.f)(u)
    }
}

/// Post-burn-in output of one Metropolis–Hastings run.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    /// One row per retained iteration, original scale.
    pub draws: Vec<Vec<f64>>,
    /// The same rows on the sampling scale.
    pub transformed: Vec<Vec<f64>>,
    /// Accepted proposals over all iterations, burn-in included.
    pub accepted: usize,
    pub total: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Chain {
    pub fn acceptance_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.accepted as f64 / self.total as f64
        }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }

    /// Column `index` of the original-scale draws.
    pub fn parameter(&self, index: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[index]).collect()
    }
}

/// Lower Cholesky factor of a proposal covariance.
pub(crate) fn proposal_factor(cov: &Mat<f64>, dim: usize) -> Result<Mat<f64>> {
    if cov.nrows() != dim || cov.ncols() != dim {
        return Err(Error::InvalidInput(format!(
            "proposal covariance is {}x{}, target has dimension {dim}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let mut asym = 0.0f64;
    let mut amax = 0.0f64;
    for i in 0..dim {
        for j in 0..dim {
            asym = asym.max((cov[(i, j)] - cov[(j, i)]).abs());
            amax = amax.max(cov[(i, j)].abs());
        }
    }
    if !(asym <= 1e-12 * amax.max(1.0)) {
        return Err(Error::InvalidInput(
            "proposal covariance must be symmetric".into(),
        ));
    }
    cov.llt(Side::Lower)
        .map(|c| c.L().to_owned())
        .map_err(|_| Error::InvalidInput("proposal covariance must be positive definite".into()))
}

/// Gaussian random-walk Metropolis–Hastings from `theta0` (sampling scale).
///
/// The first `burn_in` of `iterations` states are dropped from the returned
/// chain; acceptance counts cover every iteration.
pub fn mh_sample<T: Target + ?Sized>(
    target: &T,
    theta0: &[f64],
    proposal_cov: &Mat<f64>,
    iterations: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Chain> {
    let d = target.dim();
    if theta0.len() != d {
        return Err(Error::InvalidInput(format!(
            "start has {} coordinates, target has {d}",
            theta0.len()
        )));
    }
    if iterations <= burn_in {
        return Err(Error::InvalidInput(format!(
            "iterations ({iterations}) must exceed burn-in ({burn_in})"
        )));
    }
    let factor = proposal_factor(proposal_cov, d)?;
    let mut rng = rng::seeded(seed);

    let mut current = theta0.to_vec();
    let mut current_lp = target.log_density(theta0);
    let mut accepted = 0;
    let kept = iterations - burn_in;
    let mut transformed = Vec::with_capacity(kept);
    let mut z = vec![0.0; d];
    let mut proposal = vec![0.0; d];

    for i in 0..iterations {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for (r, p) in proposal.iter_mut().enumerate() {
            *p = current[r] + (0..=r).map(|c| factor[(r, c)] * z[c]).sum::<f64>();
        }
        let proposal_lp = target.log_density(&proposal);
        let log_u = rng.random::<f64>().ln();
        if log_u < proposal_lp - current_lp {
            std::mem::swap(&mut current, &mut proposal);
            current_lp = proposal_lp;
            accepted += 1;
        }
        if i >= burn_in {
            transformed.push(current.clone());
        }
    }

    let draws = transformed.iter().map(|u| target.to_original(u)).collect();
    Ok(Chain {
        draws,
        transformed,
        accepted,
        total: iterations,
        burn_in,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Mat<f64> {
        Mat::from_fn(1, 1, |_, _| v)
    }

    fn normal_target() -> FnTarget<impl Fn(&[f64]) -> f64> {
        FnTarget::new(1, |u: &[f64]| -0.5 * u[0] * u[0])
    }

    #[test]
    fn flat_target_always_accepts() {
        let t = FnTarget::new(2, |_: &[f64]| 0.0);
        let chain = mh_sample(&t, &[0.0, 0.0], &Mat::identity(2, 2), 5000, 100, 3).unwrap();
        assert_eq!(chain.acceptance_rate(), 1.0);
        assert_eq!(chain.len(), 4900);
    }

    #[test]
    fn standard_normal_moments() {
        let cov = scalar(2.38f64.powi(2));
        let chain = mh_sample(&normal_target(), &[0.0], &cov, 51_000, 1000, 17).unwrap();
        let x = chain.parameter(0);
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn same_seed_same_chain() {
        let cov = scalar(1.0);
        let a = mh_sample(&normal_target(), &[0.3], &cov, 2000, 0, 5).unwrap();
        let b = mh_sample(&normal_target(), &[0.3], &cov, 2000, 0, 5).unwrap();
        let c = mh_sample(&normal_target(), &[0.3], &cov, 2000, 0, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.draws, c.draws);
    }

    #[test]
    fn detailed_balance_on_three_states() {
        // States 0, 1, 2 occupy the unit cells [k, k+1); density is flat
        // within a cell so the state frequencies equal the cell masses.
        let probs: [f64; 3] = [0.2, 0.5, 0.3];
        let t = FnTarget::new(1, move |u: &[f64]| {
            let x = u[0];
            if (0.0..3.0).contains(&x) {
                probs[x as usize].ln()
            } else {
                f64::NEG_INFINITY
            }
        });
        let cov = scalar(1.0);
        let chain = mh_sample(&t, &[1.5], &cov, 201_000, 1000, 99).unwrap();
        let mut counts = [0usize; 3];
        for d in &chain.draws {
            counts[d[0] as usize] += 1;
        }
        for k in 0..3 {
            let freq = counts[k] as f64 / chain.len() as f64;
            assert!((freq - probs[k]).abs() < 0.01, "state {k}: {freq}");
        }
    }

    #[test]
    fn rejects_everything_outside_support() {
        let t = FnTarget::new(1, |u: &[f64]| if u[0] > 0.0 { 0.0 } else { f64::NEG_INFINITY });
        let chain = mh_sample(&t, &[1.0], &scalar(4.0), 5000, 0, 1).unwrap();
        assert!(chain.draws.iter().all(|d| d[0] > 0.0));
    }

    #[test]
    fn bad_inputs() {
        let t = normal_target();
        let cov = scalar(1.0);
        assert!(mh_sample(&t, &[0.0], &cov, 10, 10, 0).is_err());
        assert!(mh_sample(&t, &[0.0, 1.0], &cov, 10, 0, 0).is_err());
        assert!(mh_sample(&t, &[0.0], &scalar(-1.0), 10, 0, 0).is_err());
        let asym = Mat::from_fn(2, 2, |i, j| [[1.0, 0.5], [0.0, 1.0]][i][j]);
        let t2 = FnTarget::new(2, |_: &[f64]| 0.0);
        assert!(mh_sample(&t2, &[0.0, 0.0], &asym, 10, 0, 0).is_err());
    }
}
