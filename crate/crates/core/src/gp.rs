//! Gaussian-process regression in one input dimension with a squared
//! exponential kernel.
//!
//! Observations are centred on their sample mean and scaled to unit variance
//! before hyperparameters are optimised, so the zero-mean prior is sensible.
//! Everything a [`GpFit`] reports (kernel parameters, noise variances,
//! predictions, the marginal likelihood) is in the original units, with the
//! marginal likelihood evaluated on the centred observations.

use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_upper_triangular_in_place,
};
use faer::{Mat, MatRef, Par, Side};

use crate::data::{mean, sample_variance, TimeSeries};
use crate::error::{Error, Result};
use crate::optim::NelderMead;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Relative diagonal jitter tried first, as a fraction of the mean diagonal.
pub const BASE_JITTER: f64 = 1e-10;
/// Largest relative jitter before giving up on a factorisation.
pub const MAX_JITTER: f64 = 1e-4;

/// Number of deterministic multi-starts used by the hyperparameter search.
pub const DEFAULT_STARTS: usize = 5;

/// Squared-exponential kernel hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    lengthscale: f64,
    signal_variance: f64,
}

impl KernelParams {
    pub fn new(lengthscale: f64, signal_variance: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::InvalidParameters(format!(
                "lengthscale must be positive, got {lengthscale}"
            )));
        }
        if !(signal_variance > 0.0 && signal_variance.is_finite()) {
            return Err(Error::InvalidParameters(format!(
                "signal variance must be positive, got {signal_variance}"
            )));
        }
        Ok(Self {
            lengthscale,
            signal_variance,
        })
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }
}

/// `τ² exp(-(t - t2)² / 2ℓ²)`
pub fn rbf_kernel(t: f64, t2: f64, params: &KernelParams) -> f64 {
    let d = t - t2;
    params.signal_variance * (-(d * d) / (2.0 * params.lengthscale * params.lengthscale)).exp()
}

fn kernel_matrix(times: &[f64], params: &KernelParams) -> Mat<f64> {
    let n = times.len();
    Mat::from_fn(n, n, |i, j| rbf_kernel(times[i], times[j], params))
}

/// Cholesky factorisation with escalating diagonal jitter. Only the lower
/// triangle of `k` is read. Returns the lower factor and the absolute jitter
/// used.
fn factorize(mut k: Mat<f64>) -> Result<(Mat<f64>, f64)> {
    let n = k.nrows();
    let mean_diag = (0..n).map(|i| k[(i, i)]).sum::<f64>() / n as f64;
    if !(mean_diag.is_finite() && mean_diag > 0.0) {
        return Err(Error::CholeskyFailure { jitter: 0.0 });
    }
    let mut relative = BASE_JITTER;
    let mut applied = 0.0;
    loop {
        let jitter = relative * mean_diag;
        for i in 0..n {
            k[(i, i)] += jitter - applied;
        }
        applied = jitter;
        if let Ok(llt) = k.llt(Side::Lower) {
            return Ok((llt.L().to_owned(), jitter));
        }
        relative *= 10.0;
        if relative > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::CholeskyFailure { jitter });
        }
    }
}

/// `L⁻¹ b`, in place.
fn forward_solve(l: MatRef<'_, f64>, b: &mut Mat<f64>) {
    solve_lower_triangular_in_place(l, b.as_mut(), Par::Seq);
}

/// `(L Lᵀ)⁻¹ b`
fn chol_solve(l: MatRef<'_, f64>, b: &[f64]) -> Vec<f64> {
    let mut x = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    forward_solve(l, &mut x);
    solve_upper_triangular_in_place(l.transpose(), x.as_mut(), Par::Seq);
    (0..b.len()).map(|i| x[(i, 0)]).collect()
}

fn check_lengths(times: &[f64], noise_variances: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InsufficientData {
            required: 1,
            got: 0,
        });
    }
    if times.len() != noise_variances.len() {
        return Err(Error::InvalidInput(format!(
            "{} times but {} noise variances",
            times.len(),
            noise_variances.len()
        )));
    }
    if noise_variances.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput(
            "noise variances must be finite and nonnegative".into(),
        ));
    }
    Ok(())
}

/// `K_μ + diag(noise) + jitter·I`, with the smallest jitter on the escalation
/// ladder that makes the matrix factorisable.
pub fn build_covariance(
    times: &[f64],
    params: &KernelParams,
    noise_variances: &[f64],
) -> Result<Mat<f64>> {
    check_lengths(times, noise_variances)?;
    let mut k = kernel_matrix(times, params);
    for (i, v) in noise_variances.iter().enumerate() {
        k[(i, i)] += v;
    }
    let (_, jitter) = factorize(k.clone())?;
    for i in 0..times.len() {
        k[(i, i)] += jitter;
    }
    Ok(k)
}

/// Log marginal likelihood from the factor `L` and `α = K_y⁻¹ y`.
fn lml_from_factor(l: MatRef<'_, f64>, y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let quad: f64 = y.iter().zip(alpha).map(|(a, b)| a * b).sum();
    let log_det = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
    -0.5 * quad - 0.5 * log_det - 0.5 * n as f64 * LN_2PI
}

/// Zero-mean log marginal likelihood of `data.values()` under
/// `K_y = K_μ + diag(noise_variances)`, computed through a Cholesky factor.
pub fn log_marginal_likelihood(
    data: &TimeSeries,
    params: &KernelParams,
    noise_variances: &[f64],
) -> Result<f64> {
    check_lengths(data.times(), noise_variances)?;
    let mut k = kernel_matrix(data.times(), params);
    for (i, v) in noise_variances.iter().enumerate() {
        k[(i, i)] += v;
    }
    let (l, _) = factorize(k)?;
    let alpha = chol_solve(l.as_ref(), data.values());
    Ok(lml_from_factor(l.as_ref(), data.values(), &alpha))
}

/// A conditioned (and usually optimised) GP.
#[derive(Debug, Clone)]
pub struct GpFit {
    params: KernelParams,
    noise_variances: Vec<f64>,
    train: TimeSeries,
    offset: f64,
    chol: Mat<f64>,
    alpha: Vec<f64>,
    jitter: f64,
    log_marginal: f64,
    learned_noise: bool,
}

impl GpFit {
    /// Condition on `data` at fixed hyperparameters, without optimisation.
    pub fn condition(
        data: &TimeSeries,
        params: KernelParams,
        noise_variances: Vec<f64>,
    ) -> Result<Self> {
        check_lengths(data.times(), &noise_variances)?;
        let offset = mean(data.values());
        let centred: Vec<f64> = data.values().iter().map(|v| v - offset).collect();
        let mut k = kernel_matrix(data.times(), &params);
        for (i, v) in noise_variances.iter().enumerate() {
            k[(i, i)] += v;
        }
        let (chol, jitter) = factorize(k)?;
        let alpha = chol_solve(chol.as_ref(), &centred);
        let log_marginal = lml_from_factor(chol.as_ref(), &centred, &alpha);
        Ok(Self {
            params,
            noise_variances,
            train: data.clone(),
            offset,
            chol,
            alpha,
            jitter,
            log_marginal,
            learned_noise: false,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn noise_variances(&self) -> &[f64] {
        &self.noise_variances
    }

    pub fn train(&self) -> &TimeSeries {
        &self.train
    }

    /// Constant the training values were centred on (the prior mean).
    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Lower Cholesky factor of `K_y` (including jitter).
    pub fn chol_ky(&self) -> MatRef<'_, f64> {
        self.chol.as_ref()
    }

    /// `K_y⁻¹ (ỹ - offset)`
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Log marginal likelihood of the centred observations.
    pub fn log_marginal(&self) -> f64 {
        self.log_marginal
    }

    /// Hyperparameters in log space, original units:
    /// `[ln ℓ, ln τ²]`, plus `ln σ²` when the noise level was learned.
    pub fn log_hyperparameters(&self) -> Vec<f64> {
        let mut v = vec![
            self.params.lengthscale.ln(),
            self.params.signal_variance.ln(),
        ];
        if self.learned_noise {
            v.push(self.noise_variances[0].ln());
        }
        v
    }

    /// Leave-one-out residuals `ỹᵢ - μ₋ᵢ(tᵢ)`, from `αᵢ / [K_y⁻¹]ᵢᵢ`.
    pub fn loo_residuals(&self) -> Vec<f64> {
        let n = self.alpha.len();
        let mut linv = Mat::identity(n, n);
        forward_solve(self.chol.as_ref(), &mut linv);
        // diag(K⁻¹)ᵢ = Σₖ (L⁻¹)ₖᵢ², and L⁻¹ is lower triangular.
        (0..n)
            .map(|i| {
                let d: f64 = (i..n).map(|k| linv[(k, i)].powi(2)).sum();
                self.alpha[i] / d
            })
            .collect()
    }

    /// Posterior mean and latent-function variance at `t_star`.
    pub fn predict(&self, t_star: &[f64]) -> Prediction {
        let times = self.train.times();
        let n = times.len();
        let mut kstar = Mat::from_fn(n, t_star.len(), |i, j| {
            rbf_kernel(times[i], t_star[j], &self.params)
        });
        let mean = (0..t_star.len())
            .map(|j| self.offset + (0..n).map(|i| kstar[(i, j)] * self.alpha[i]).sum::<f64>())
            .collect();
        forward_solve(self.chol.as_ref(), &mut kstar);
        let variance = (0..t_star.len())
            .map(|j| {
                let explained: f64 = (0..n).map(|i| kstar[(i, j)].powi(2)).sum();
                (self.params.signal_variance - explained).max(0.0)
            })
            .collect();
        Prediction { mean, variance }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    /// Latent-function variance; observation noise is not included.
    pub variance: Vec<f64>,
}

pub fn predict(fit: &GpFit, t_star: &[f64]) -> Prediction {
    fit.predict(t_star)
}

/// How the observation noise enters a hyperparameter search.
#[derive(Debug, Clone, Copy)]
pub(crate) enum NoiseSpec<'a> {
    /// Per-point variances in original units, held fixed.
    Fixed(&'a [f64]),
    /// One shared variance, optimised with the kernel parameters.
    Learned,
}

/// Box in standardised log space. Outside it the objective is `+inf`.
const LOG_SIGNAL_BOUNDS: (f64, f64) = (-18.420_680_743_952_367, 9.210_340_371_976_184); // 1e-8 ..= 1e4
const LOG_NOISE_BOUNDS: (f64, f64) = (-23.025_850_929_940_457, 4.605_170_185_988_092); // 1e-10 ..= 1e2
/// Kernel correlation at the 5% and 95% quantiles of the pairwise input
/// distances, at the smallest and largest admissible lengthscale.
const MIN_CORRELATION: f64 = 0.01;
const MAX_CORRELATION: f64 = 0.5;

/// Admissible lengthscale range for the given inputs. Below the lower end
/// the kernel starts to act like white noise and soaks up the observation
/// error; above the upper end it is flat over the whole design.
pub fn lengthscale_bounds(times: &[f64]) -> (f64, f64) {
    let mut unique = times.to_vec();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    let mut d = Vec::with_capacity(unique.len() * unique.len().saturating_sub(1) / 2);
    for i in 1..unique.len() {
        for j in 0..i {
            d.push(unique[i] - unique[j]);
        }
    }
    if d.is_empty() {
        return (f64::MIN_POSITIVE, f64::MAX);
    }
    d.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = (d.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        d[lo] + (h - lo as f64) * (d[h.ceil() as usize] - d[lo])
    };
    let lower = q(0.05) / (-2.0 * MIN_CORRELATION.ln()).sqrt();
    let upper = q(0.95) / (-2.0 * MAX_CORRELATION.ln()).sqrt();
    (lower, upper)
}

struct Standardised {
    y: Vec<f64>,
    scale: f64,
    /// Distinct values of `(tᵢ - tⱼ)²/2`; regular grids have only `n`.
    half_sqdist: Vec<f64>,
    /// Index into `half_sqdist` for each lower-triangle entry, column-major.
    pair_index: Vec<u32>,
    log_l_bounds: (f64, f64),
}

impl Standardised {
    fn new(data: &TimeSeries, min_lengthscale: Option<f64>) -> Self {
        let m = mean(data.values());
        let sd = sample_variance(data.values()).sqrt();
        let scale = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
        let y: Vec<f64> = data.values().iter().map(|v| (v - m) / scale).collect();
        let t = data.times();
        let n = t.len();
        // Lower triangle only; the factorisation never reads the rest.
        let pairs: Vec<f64> = (0..n)
            .flat_map(|j| (j..n).map(move |i| 0.5 * (t[i] - t[j]).powi(2)))
            .collect();
        let mut half_sqdist = pairs.clone();
        half_sqdist.sort_by(f64::total_cmp);
        half_sqdist.dedup();
        let pair_index = pairs
            .iter()
            .map(|d| half_sqdist.partition_point(|v| v < d) as u32)
            .collect();
        Self {
            y,
            scale,
            half_sqdist,
            pair_index,
            log_l_bounds: {
                let (lo, hi) = lengthscale_bounds(t);
                let lo = min_lengthscale.map_or(lo, |m| m.max(lo).min(hi));
                (lo.ln(), hi.ln())
            },
        }
    }

    /// Negative log marginal likelihood at standardised log-hyperparameters.
    fn objective(&self, x: &[f64], noise: &NoiseSpec<'_>) -> f64 {
        let (log_l, log_s) = (x[0], x[1]);
        if !(self.log_l_bounds.0..=self.log_l_bounds.1).contains(&log_l)
            || !(LOG_SIGNAL_BOUNDS.0..=LOG_SIGNAL_BOUNDS.1).contains(&log_s)
        {
            return f64::INFINITY;
        }
        let inv = (-2.0 * log_l).exp();
        let signal = log_s.exp();
        let n = self.y.len();
        let kernel: Vec<f64> = self
            .half_sqdist
            .iter()
            .map(|d| signal * (-d * inv).exp())
            .collect();
        let mut k = Mat::zeros(n, n);
        let mut idx = self.pair_index.iter();
        for j in 0..n {
            for i in j..n {
                k[(i, j)] = kernel[*idx.next().expect("one index per pair") as usize];
            }
        }
        let scale2 = self.scale * self.scale;
        match noise {
            NoiseSpec::Fixed(v) => {
                for i in 0..n {
                    k[(i, i)] += v[i] / scale2;
                }
            }
            NoiseSpec::Learned => {
                let log_noise = x[2];
                if !(LOG_NOISE_BOUNDS.0..=LOG_NOISE_BOUNDS.1).contains(&log_noise) {
                    return f64::INFINITY;
                }
                let nv = log_noise.exp();
                for i in 0..n {
                    k[(i, i)] += nv;
                }
            }
        }
        match factorize(k) {
            Ok((l, _)) => {
                let alpha = chol_solve(l.as_ref(), &self.y);
                -lml_from_factor(l.as_ref(), &self.y, &alpha)
            }
            Err(_) => f64::INFINITY,
        }
    }

    fn to_standard(&self, x: &[f64]) -> Vec<f64> {
        let ls2 = 2.0 * self.scale.ln();
        let mut v = x.to_vec();
        for e in v.iter_mut().skip(1) {
            *e -= ls2;
        }
        v
    }

    /// Pull a standardised start just inside the search box.
    fn clamp_start(&self, mut x: Vec<f64>) -> Vec<f64> {
        let margin: f64 = 1e-3;
        let (lo, hi) = self.log_l_bounds;
        let m = margin.min(0.25 * (hi - lo));
        x[0] = x[0].clamp(lo + m, hi - m);
        x[1] = x[1].clamp(LOG_SIGNAL_BOUNDS.0 + margin, LOG_SIGNAL_BOUNDS.1 - margin);
        if let Some(v) = x.get_mut(2) {
            *v = v.clamp(LOG_NOISE_BOUNDS.0 + margin, LOG_NOISE_BOUNDS.1 - margin);
        }
        x
    }

    fn to_original(&self, x: &[f64]) -> Vec<f64> {
        let ls2 = 2.0 * self.scale.ln();
        let mut v = x.to_vec();
        for e in v.iter_mut().skip(1) {
            *e += ls2;
        }
        v
    }
}

/// Deterministic start points in original-unit log space: lengthscales
/// log-spaced from `range/50` to `range`, signal variance at the sample
/// variance, and (if learned) noise at a tenth of it.
pub fn default_starts(data: &TimeSeries, learn_noise: bool, count: usize) -> Vec<Vec<f64>> {
    let range = data.time_range();
    let var = sample_variance(data.values());
    let var = if var > 0.0 { var } else { 1.0 };
    (0..count)
        .map(|k| {
            let frac = if count > 1 {
                k as f64 / (count - 1) as f64
            } else {
                0.5
            };
            let l = range / 50.0 * 50f64.powf(frac);
            let mut x = vec![l.ln(), var.ln()];
            if learn_noise {
                x.push((0.1 * var).ln());
            }
            x
        })
        .collect()
}

/// Multi-start Nelder–Mead over log-hyperparameters. Starts are given in
/// original-unit log space (see [`GpFit::log_hyperparameters`]).
pub(crate) fn optimise(
    data: &TimeSeries,
    noise: NoiseSpec<'_>,
    min_lengthscale: Option<f64>,
    starts: &[Vec<f64>],
    optimizer: &NelderMead,
) -> Result<GpFit> {
    if data.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            got: data.len(),
        });
    }
    if !(data.time_range() > 0.0) {
        return Err(Error::InvalidInput(
            "time range must be positive to fit a GP".into(),
        ));
    }
    if let NoiseSpec::Fixed(v) = noise {
        check_lengths(data.times(), v)?;
    }
    let std = Standardised::new(data, min_lengthscale);
    let search = |starts: &[Vec<f64>]| {
        starts
            .iter()
            .map(|s| {
                let x0 = std.clamp_start(std.to_standard(s));
                optimizer.minimize(|x| std.objective(x, &noise), &x0)
            })
            .filter(|m| m.value.is_finite())
            .min_by(|a, b| a.value.total_cmp(&b.value))
    };
    let best = search(starts)
        .or_else(|| {
            let learn = matches!(noise, NoiseSpec::Learned);
            search(&default_starts(data, learn, DEFAULT_STARTS))
        })
        .ok_or_else(|| {
            Error::OptimizationFailure("every start produced a singular covariance".into())
        })?;
    let x = std.to_original(&best.point);
    let params = KernelParams::new(x[0].exp(), x[1].exp())?;
    let (noise_variances, learned) = match noise {
        NoiseSpec::Fixed(v) => (v.to_vec(), false),
        NoiseSpec::Learned => (vec![x[2].exp(); data.len()], true),
    };
    let mut fit = GpFit::condition(data, params, noise_variances)?;
    fit.learned_noise = learned;
    Ok(fit)
}

/// Fit kernel hyperparameters by maximising the marginal likelihood with the
/// per-point noise variances held fixed.
pub fn fit_gp(data: &TimeSeries, noise_variances: &[f64]) -> Result<GpFit> {
    optimise(
        data,
        NoiseSpec::Fixed(noise_variances),
        None,
        &default_starts(data, false, DEFAULT_STARTS),
        &NelderMead::default(),
    )
}

/// Fit kernel hyperparameters together with a single shared noise variance.
pub fn fit_gp_homoscedastic(data: &TimeSeries) -> Result<GpFit> {
    optimise(
        data,
        NoiseSpec::Learned,
        None,
        &default_starts(data, true, DEFAULT_STARTS),
        &NelderMead::default(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn params(l: f64, s: f64) -> KernelParams {
        KernelParams::new(l, s).unwrap()
    }

    type Dense = Vec<Vec<f64>>;

    /// Gauss–Jordan with partial pivoting: `(A⁻¹, det A)`.
    fn invert(a: &Dense) -> (Dense, f64) {
        let n = a.len();
        let mut m: Dense = a
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut r = row.clone();
                r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                r
            })
            .collect();
        let mut det = 1.0;
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
            if p != c {
                m.swap(p, c);
                det = -det;
            }
            let pivot = m[c][c];
            det *= pivot;
            for v in m[c].iter_mut() {
                *v /= pivot;
            }
            for r in 0..n {
                if r != c {
                    let f = m[r][c];
                    let row_c = m[c].clone();
                    for (v, w) in m[r].iter_mut().zip(row_c) {
                        *v -= f * w;
                    }
                }
            }
        }
        (m.into_iter().map(|r| r[n..].to_vec()).collect(), det)
    }

    fn quad_form(a: &[f64], m: &Dense, b: &[f64]) -> f64 {
        (0..a.len())
            .map(|i| (0..b.len()).map(|j| a[i] * m[i][j] * b[j]).sum::<f64>())
            .sum()
    }

    fn dense_cov(times: &[f64], p: &KernelParams, noise: &[f64]) -> Dense {
        let n = times.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let d = times[i] - times[j];
                        p.signal_variance() * (-d * d / (2.0 * p.lengthscale().powi(2))).exp()
                            + if i == j { noise[i] } else { 0.0 }
                    })
                    .collect()
            })
            .collect()
    }

    fn to_dense(m: MatRef<'_, f64>) -> Dense {
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
    }

    /// Marginal likelihood through an explicit inverse and determinant.
    fn dense_lml(times: &[f64], y: &[f64], p: &KernelParams, noise: &[f64]) -> f64 {
        let n = times.len();
        let mut k = dense_cov(times, p, noise);
        let jitter = BASE_JITTER * (0..n).map(|i| k[i][i]).sum::<f64>() / n as f64;
        for (i, row) in k.iter_mut().enumerate() {
            row[i] += jitter;
        }
        let (inv, det) = invert(&k);
        -0.5 * quad_form(y, &inv, y) - 0.5 * det.ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(rbf_kernel(3.0, 3.0, &params(2.0, 1.5)), 1.5);
        assert_relative_eq!(rbf_kernel(0.0, 1.0, &params(1.0, 1.0)), 0.606_530_659_712_633_4, epsilon = 1e-15);
        assert!(rbf_kernel(0.0, 1000.0, &params(1.0, 1.0)) < 1e-300);
    }

    #[test]
    fn kernel_params_validated() {
        assert!(KernelParams::new(0.0, 1.0).is_err());
        assert!(KernelParams::new(1.0, -1.0).is_err());
        assert!(KernelParams::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn single_point_covariance() {
        let k = build_covariance(&[0.0], &params(1.0, 2.0), &[0.5]).unwrap();
        assert_eq!((k.nrows(), k.ncols()), (1, 1));
        assert_relative_eq!(k[(0, 0)], 2.5 + 2.5 * BASE_JITTER, epsilon = 1e-15);
    }

    #[test]
    fn three_point_covariance() {
        let k = build_covariance(&[0.0, 1.0, 2.0], &params(1.0, 1.0), &[0.1; 3]).unwrap();
        let jitter = 1.1 * BASE_JITTER;
        for i in 0..3 {
            assert_relative_eq!(k[(i, i)], 1.1 + jitter, epsilon = 1e-15);
        }
        assert_relative_eq!(k[(0, 1)], (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(k[(1, 2)], (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(k[(0, 2)], (-2.0f64).exp(), epsilon = 1e-15);
        assert_eq!(k, k.transpose().to_owned());
    }

    #[test]
    fn duplicated_times_without_noise_need_jitter() {
        // Rank one; either jitter rescues it or the ladder gives up.
        match build_covariance(&[1.0, 1.0], &params(1.0, 1.0), &[0.0, 0.0]) {
            Ok(k) => assert!(k[(0, 0)] > 1.0),
            Err(e) => assert!(matches!(e, Error::CholeskyFailure { .. })),
        }
    }

    #[test]
    fn scalar_marginal_likelihood() {
        let data = TimeSeries::new(vec![0.0], vec![1.7]).unwrap();
        let v = 0.8 + 0.3;
        let expected = -0.5 * 1.7f64.powi(2) / v - 0.5 * v.ln() - 0.5 * LN_2PI;
        let got = log_marginal_likelihood(&data, &params(1.0, 0.8), &[0.3]).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-9);
    }

    #[test]
    fn zero_observations_leave_only_determinant() {
        let data = TimeSeries::new(vec![0.0, 0.5, 2.0], vec![0.0; 3]).unwrap();
        let p = params(0.7, 1.3);
        let noise = [0.2, 0.1, 0.4];
        let k = build_covariance(data.times(), &p, &noise).unwrap();
        let (_, det) = invert(&to_dense(k.as_ref()));
        let expected = -0.5 * det.ln() - 1.5 * LN_2PI;
        let got = log_marginal_likelihood(&data, &p, &noise).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-10);
    }

    #[test]
    fn four_point_instance_matches_dense_oracle() {
        let times = [0.1, 0.9, 1.7, 3.2];
        let y = [0.3, -1.1, 0.8, 2.0];
        let p = params(0.9, 1.4);
        let noise = [0.05, 0.2, 0.1, 0.3];
        let data = TimeSeries::new(times.to_vec(), y.to_vec()).unwrap();
        let got = log_marginal_likelihood(&data, &p, &noise).unwrap();
        assert_relative_eq!(got, dense_lml(&times, &y, &p, &noise), epsilon = 1e-8);
    }

    fn increasing_times(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.05f64..2.0, n).prop_map(|gaps| {
            gaps.iter()
                .scan(0.0, |acc, g| {
                    *acc += g;
                    Some(*acc)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn kernel_is_symmetric(a in -1e3f64..1e3, b in -1e3f64..1e3, l in 1e-3f64..1e3, s in 1e-3f64..1e3) {
            let p = params(l, s);
            prop_assert_eq!(rbf_kernel(a, b, &p), rbf_kernel(b, a, &p));
            let k = rbf_kernel(a, b, &p);
            prop_assert!(k >= 0.0 && k <= s);
        }

        #[test]
        fn covariance_factorises(
            times in (1usize..=20).prop_flat_map(increasing_times),
            l in 0.05f64..10.0,
            s in 0.01f64..10.0,
            noise in 1e-8f64..1.0,
        ) {
            let n = times.len();
            let k = build_covariance(&times, &params(l, s), &vec![noise; n]).unwrap();
            let (l, _) = factorize(k).unwrap();
            prop_assert!((0..n).all(|i| l[(i, i)] > 0.0));
        }

        #[test]
        fn marginal_likelihood_matches_dense_oracle(
            (times, y) in (1usize..=8).prop_flat_map(|n| (increasing_times(n), prop::collection::vec(-3.0f64..3.0, n))),
            l in 0.2f64..3.0,
            s in 0.1f64..3.0,
            noise in prop::collection::vec(0.05f64..1.0, 8),
        ) {
            let n = times.len();
            let noise = &noise[..n];
            let data = TimeSeries::new(times.clone(), y.clone()).unwrap();
            let p = params(l, s);
            let fast = log_marginal_likelihood(&data, &p, noise).unwrap();
            let slow = dense_lml(&times, &y, &p, noise);
            prop_assert!((fast - slow).abs() < 1e-8, "{} vs {}", fast, slow);
        }

        #[test]
        fn prediction_reverts_to_prior_far_away(
            times in (2usize..=10).prop_flat_map(increasing_times),
            l in 0.1f64..2.0,
            s in 0.1f64..4.0,
            offset in 50.5f64..100.0,
        ) {
            let n = times.len();
            // Antisymmetric values so the training mean, and hence the prior
            // mean, is exactly zero.
            let mut y: Vec<f64> = (0..n).map(|i| (i as f64 - (n - 1) as f64 / 2.0) * 0.3).collect();
            y[0] = -y[n - 1];
            let data = TimeSeries::new(times.clone(), y).unwrap();
            let fit = GpFit::condition(&data, params(l, s), vec![0.1; n]).unwrap();
            let t_star = times[n - 1] + offset * l;
            let pred = fit.predict(&[t_star]);
            prop_assert!((pred.mean[0] - fit.offset()).abs() < 1e-6);
            prop_assert!(fit.offset().abs() < 1e-12);
            prop_assert!((pred.variance[0] - s).abs() < 1e-6);
        }
    }

    #[test]
    fn interpolates_training_points_as_noise_vanishes() {
        let data = TimeSeries::new(vec![0.0, 1.0, 2.5, 3.0], vec![1.0, 2.0, -0.5, 0.3]).unwrap();
        let fit = GpFit::condition(&data, params(1.0, 1.0), vec![1e-12; 4]).unwrap();
        let pred = fit.predict(data.times());
        for (m, y) in pred.mean.iter().zip(data.values()) {
            assert!((m - y).abs() < 1e-6, "{m} vs {y}");
        }
        assert!(pred.variance.iter().all(|v| *v >= 0.0 && *v < 1e-6));
    }

    #[test]
    fn three_point_prediction_matches_dense_oracle() {
        let times = [0.0, 1.2, 2.0];
        let y = [0.5, -0.4, 1.1];
        let p = params(0.8, 1.3);
        let noise = [0.1, 0.05, 0.2];
        let data = TimeSeries::new(times.to_vec(), y.to_vec()).unwrap();
        let fit = GpFit::condition(&data, p, noise.to_vec()).unwrap();
        let ybar = y.iter().sum::<f64>() / 3.0;
        let (inv, _) = invert(&dense_cov(&times, &p, &noise));
        let yc: Vec<f64> = y.iter().map(|v| v - ybar).collect();
        let t_star = [-0.5, 0.6, 1.9, 4.0];
        let pred = fit.predict(&t_star);
        for (idx, &ts) in t_star.iter().enumerate() {
            let ks: Vec<f64> = times.iter().map(|&t| rbf_kernel(t, ts, &p)).collect();
            let mean = ybar + quad_form(&ks, &inv, &yc);
            let var = p.signal_variance() - quad_form(&ks, &inv, &ks);
            assert_relative_eq!(pred.mean[idx], mean, epsilon = 1e-8);
            assert_relative_eq!(pred.variance[idx], var, epsilon = 1e-8);
        }
    }

    #[test]
    fn fit_invariants_hold() {
        let data = TimeSeries::new(vec![0.0, 0.4, 1.1, 1.5, 2.2, 3.0], vec![0.1, 0.5, 0.9, 0.7, 0.2, -0.4]).unwrap();
        let fit = fit_gp(&data, &[0.05; 6]).unwrap();
        let l = fit.chol_ky();
        let rebuilt = l * l.transpose();
        let k = build_covariance(data.times(), fit.params(), fit.noise_variances()).unwrap();
        let mut with_fit_jitter = kernel_matrix(data.times(), fit.params());
        for i in 0..6 {
            with_fit_jitter[(i, i)] += 0.05 + fit.jitter();
        }
        assert!((&rebuilt - &with_fit_jitter).norm_l2() / with_fit_jitter.norm_l2() <= 1e-8);
        assert!((&k - &with_fit_jitter).norm_l2() / k.norm_l2() <= 1e-8);
        let centred = data.with_values(data.values().iter().map(|v| v - fit.offset()).collect()).unwrap();
        let lml = log_marginal_likelihood(&centred, fit.params(), fit.noise_variances()).unwrap();
        assert_relative_eq!(lml, fit.log_marginal(), epsilon = 1e-8);
    }

    #[test]
    fn fit_beats_every_start() {
        let data = TimeSeries::new(
            (0..12).map(|i| i as f64 * 0.5).collect(),
            (0..12).map(|i| (i as f64 * 0.5).sin() + 0.1 * (i as f64 * 7.3).cos()).collect(),
        )
        .unwrap();
        let noise = vec![0.02; 12];
        let fit = fit_gp(&data, &noise).unwrap();
        let centred = data.with_values(data.values().iter().map(|v| v - fit.offset()).collect()).unwrap();
        for start in default_starts(&data, false, DEFAULT_STARTS) {
            let p = params(start[0].exp(), start[1].exp());
            let at_start = log_marginal_likelihood(&centred, &p, &noise).unwrap();
            assert!(fit.log_marginal() >= at_start - 1e-9);
        }
    }

    #[test]
    fn two_points_is_enough() {
        let data = TimeSeries::new(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        assert!(fit_gp(&data, &[0.1, 0.1]).is_ok());
        assert!(fit_gp_homoscedastic(&data).is_ok());
        let one = TimeSeries::new(vec![0.0], vec![1.0]).unwrap();
        assert!(matches!(fit_gp(&one, &[0.1]), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn recovers_lengthscale_from_gp_draw() {
        let n = 50;
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 10.0 / (n - 1) as f64).collect();
        let truth = params(1.0, 1.0);
        let mut k = kernel_matrix(&times, &truth);
        for i in 0..n {
            k[(i, i)] += 0.01;
        }
        let (l, _) = factorize(k).unwrap();
        let mut rng = crate::rng::seeded(11);
        let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = (0..n).map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum()).collect();
        let data = TimeSeries::new(times, y).unwrap();
        let fit = fit_gp(&data, &vec![0.01; n]).unwrap();
        let ratio = fit.params().lengthscale() / 1.0;
        assert!((0.5..=2.0).contains(&ratio), "lengthscale {}", fit.params().lengthscale());
    }

    #[test]
    fn white_noise_total_variance() {
        let n = 30;
        let mut rng = crate::rng::seeded(5);
        let times: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let values: Vec<f64> = (0..n)
            .map(|_| 4.0 + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let data = TimeSeries::new(times, values).unwrap();
        let fit = fit_gp_homoscedastic(&data).unwrap();
        // At the shortest allowed lengthscale signal and noise trade off
        // freely; only their total and the overall level are identified.
        let total = fit.params().signal_variance() + fit.noise_variances()[0];
        assert!((0.1..0.5).contains(&total), "total variance {total}");
        let mids: Vec<f64> = (0..n - 1).map(|i| i as f64 + 0.5).collect();
        let level = fit.predict(&mids).mean.iter().sum::<f64>() / mids.len() as f64;
        assert!((level - 4.0).abs() < 0.2, "{level}");
    }
}
