use faer::Mat;

use crate::bayes::mh::Chain;
use crate::error::{Error, Result};

/// Shortest chain accepted by [`gelman_rubin`].
pub const MIN_RHAT_LENGTH: usize = 10;

/// Fewest pilot draws accepted by [`adapt_proposal`].
pub const MIN_PILOT_DRAWS: usize = 100;

/// Potential scale reduction factor for parameter `index` across chains of
/// equal length, using the between/within variance decomposition.
pub fn gelman_rubin(chains: &[Chain], index: usize) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "R-hat needs at least two chains, got {}",
            chains.len()
        )));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidInput("chains must have equal lengths".into()));
    }
    if n < MIN_RHAT_LENGTH {
        return Err(Error::InvalidInput(format!(
            "chains need at least {MIN_RHAT_LENGTH} draws, got {n}"
        )));
    }
    if chains.iter().any(|c| c.dim() <= index) {
        return Err(Error::InvalidInput(format!("no parameter at index {index}")));
    }

    let m = chains.len() as f64;
    let nf = n as f64;
    let mut means = Vec::with_capacity(chains.len());
    let mut within = 0.0;
    for c in chains {
        let x = c.parameter(index);
        let mean = x.iter().sum::<f64>() / nf;
        within += x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        means.push(mean);
    }
    within /= m;
    if !(within > 0.0) {
        return Err(Error::DegenerateChains(format!(
            "parameter {index} has zero within-chain variance"
        )));
    }
    let grand = means.iter().sum::<f64>() / m;
    let between = nf * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let pooled = (nf - 1.0) / nf * within + between / nf;
    Ok((pooled / within).sqrt())
}

/// Sample covariance of the sampling-scale draws.
pub(crate) fn covariance(rows: &[Vec<f64>]) -> Mat<f64> {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = Mat::zeros(d, d);
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / (n - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

/// `(2.38²/d)·Cov(pilot) + 1e-10·I` from the pilot's sampling-scale draws.
pub fn adapt_proposal(pilot: &Chain) -> Result<Mat<f64>> {
    if pilot.transformed.len() < MIN_PILOT_DRAWS {
        return Err(Error::InvalidInput(format!(
            "pilot needs at least {MIN_PILOT_DRAWS} draws, got {}",
            pilot.transformed.len()
        )));
    }
    let cov = covariance(&pilot.transformed);
    let d = cov.nrows();
    if let Some(i) = (0..d).find(|&i| !(cov[(i, i)] > 0.0)) {
        return Err(Error::DegenerateChains(format!(
            "pilot never moved in coordinate {i}"
        )));
    }
    let scale = 2.38f64.powi(2) / d as f64;
    Ok(Mat::from_fn(d, d, |i, j| {
        cov[(i, j)] * scale + if i == j { 1e-10 } else { 0.0 }
    }))
}

/// `R₀ = β(S₀ + I₀)/δ` for every draw of `(β, S₀, I₀)`.
pub fn r0_posterior(chain: &Chain, delta: f64) -> Vec<f64> {
    chain
        .draws
        .iter()
        .map(|d| d[0] * (d[1] + d[2]) / delta)
        .collect()
}
