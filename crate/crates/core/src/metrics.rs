//! Posterior comparison and summaries: squared MMD, predictive bands, KDE.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::bayes::{ModelTemplate, NoiseModel};
use crate::error::{Error, Result};
use crate::rng;

/// Squared maximum mean discrepancy between two sample sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdResult {
    /// Biased (V-statistic) estimate, clamped at zero.
    pub mmd2: f64,
    pub bandwidth: f64,
    pub n: usize,
    pub m: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn check_samples(name: &str, s: &[Vec<f64>]) -> Result<usize> {
    let dim = s.first().map_or(0, Vec::len);
    if s.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidInput(format!("{name} rows differ in length")));
    }
    if s.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{name} contains non-finite values")));
    }
    Ok(dim)
}

/// Median Euclidean distance over all distinct pairs of the pooled samples.
pub fn median_heuristic(x: &[Vec<f64>], z: &[Vec<f64>]) -> Result<f64> {
    let dx = check_samples("x", x)?;
    let dz = check_samples("z", z)?;
    if !x.is_empty() && !z.is_empty() && dx != dz {
        return Err(Error::InvalidInput("sample sets differ in dimension".into()));
    }
    let pooled: Vec<&Vec<f64>> = x.iter().chain(z).collect();
    if pooled.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "median heuristic needs at least two points, got {}",
            pooled.len()
        )));
    }
    let mut d = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 1..pooled.len() {
        for j in 0..i {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    let median = median_of(&mut d);
    if !(median > 0.0) {
        return Err(Error::DegenerateSamples(
            "median pairwise distance is zero".into(),
        ));
    }
    Ok(median)
}

fn median_of(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

fn kernel_mean(a: &[Vec<f64>], b: &[Vec<f64>], inv_two_l2: f64) -> f64 {
    let mut total = 0.0;
    for p in a {
        let mut row = 0.0;
        for q in b {
            row += (-sq_dist(p, q) * inv_two_l2).exp();
        }
        total += row;
    }
    total / (a.len() as f64 * b.len() as f64)
}

/// `(1/n²)ΣΣk(xᵢ,xⱼ) + (1/m²)ΣΣk(zᵢ,zⱼ) − (2/nm)ΣΣk(xᵢ,zⱼ)` with
/// `k(x,z) = exp(−‖x−z‖²/(2λ²))`, diagonal terms included.
pub fn mmd_squared(x: &[Vec<f64>], z: &[Vec<f64>], lambda: f64) -> Result<MmdResult> {
    if x.is_empty() || z.is_empty() {
        return Err(Error::InvalidInput("MMD needs nonempty sample sets".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "bandwidth must be positive, got {lambda}"
        )));
    }
    if check_samples("x", x)? != check_samples("z", z)? {
        return Err(Error::InvalidInput("sample sets differ in dimension".into()));
    }
    let c = 1.0 / (2.0 * lambda * lambda);
    let kxx = kernel_mean(x, x, c);
    let kzz = kernel_mean(z, z, c);
    // Sum the cross term in both orders so swapping x and z is exact.
    let kxz = 0.5 * (kernel_mean(x, z, c) + kernel_mean(z, x, c));
    let raw = (kxx + kzz) - 2.0 * kxz;
    Ok(MmdResult {
        mmd2: raw.max(0.0),
        bandwidth: lambda,
        n: x.len(),
        m: z.len(),
    })
}

/// Z-score every column of each set with the mean and standard deviation of
/// `reference`.
pub fn standardize_by(reference: &[Vec<f64>], sets: &[&[Vec<f64>]]) -> Result<Vec<Vec<Vec<f64>>>> {
    let d = check_samples("reference", reference)?;
    if reference.len() < 2 {
        return Err(Error::InvalidInput("reference needs at least two rows".into()));
    }
    let n = reference.len() as f64;
    let mut mean = vec![0.0; d];
    for r in reference {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut sd = vec![0.0; d];
    for r in reference {
        for ((s, v), m) in sd.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    for (k, s) in sd.iter_mut().enumerate() {
        *s = (*s / (n - 1.0)).sqrt();
        if !(*s > 0.0) {
            return Err(Error::DegenerateSamples(format!(
                "reference column {k} is constant"
            )));
        }
    }
    sets.iter()
        .map(|set| {
            if check_samples("set", set)? != d && !set.is_empty() {
                return Err(Error::InvalidInput("set dimension differs from reference".into()));
            }
            Ok(set
                .iter()
                .map(|r| {
                    r.iter()
                        .zip(&mean)
                        .zip(&sd)
                        .map(|((v, m), s)| (v - m) / s)
                        .collect()
                })
                .collect())
        })
        .collect()
}

/// At most `max` items, evenly spaced and always including the first.
pub fn thin<T: Clone>(items: &[T], max: usize) -> Vec<T> {
    if max == 0 || items.len() <= max {
        return items.to_vec();
    }
    (0..max).map(|k| items[k * items.len() / max].clone()).collect()
}

/// Pointwise posterior predictive quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveBand {
    pub times: Vec<f64>,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
}

impl PredictiveBand {
    pub fn widths(&self) -> Vec<f64> {
        self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).collect()
    }
}

/// Linear-interpolation quantile of sorted data (R type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Simulate `g(y(t;θ)) + ε(t)` for every draw and report pointwise
/// `(1−level)/2`, `0.5` and `(1+level)/2` quantiles.
///
/// `draws` are full original-scale parameter vectors as sampled, so a
/// sampled noise scale is picked up by `noise`.
pub fn predictive_band(
    draws: &[Vec<f64>],
    template: &ModelTemplate,
    noise: &NoiseModel,
    times: &[f64],
    level: f64,
    draws_per_sample: usize,
    seed: u64,
) -> Result<PredictiveBand> {
    if draws.is_empty() {
        return Err(Error::InvalidInput("no posterior draws".into()));
    }
    if !(0.0..1.0).contains(&level) {
        return Err(Error::InvalidInput(format!("level must be in [0, 1), got {level}")));
    }
    if draws_per_sample == 0 || times.is_empty() {
        return Err(Error::InvalidInput(
            "need at least one time and one simulation per draw".into(),
        ));
    }
    let mut r = rng::seeded(seed);
    let total = draws.len() * draws_per_sample;
    let mut sims: Vec<Vec<f64>> = vec![Vec::with_capacity(total); times.len()];
    for theta in draws {
        let mean = template.observed(theta, times)?;
        let var = noise.variances_at(times, theta);
        for _ in 0..draws_per_sample {
            for (k, col) in sims.iter_mut().enumerate() {
                let e: f64 = r.sample(StandardNormal);
                col.push(mean[k] + var[k].sqrt() * e);
            }
        }
    }
    let lo_p = 0.5 * (1.0 - level);
    let hi_p = 0.5 * (1.0 + level);
    let mut band = PredictiveBand {
        times: times.to_vec(),
        lower: Vec::with_capacity(times.len()),
        median: Vec::with_capacity(times.len()),
        upper: Vec::with_capacity(times.len()),
        level,
    };
    for mut col in sims {
        col.sort_by(f64::total_cmp);
        band.lower.push(quantile_sorted(&col, lo_p));
        band.median.push(quantile_sorted(&col, 0.5));
        band.upper.push(quantile_sorted(&col, hi_p));
    }
    Ok(band)
}

/// Gaussian KDE with Silverman's bandwidth `1.06·sd·n^(−1/5)`.
pub fn kde_1d(samples: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    let h = silverman_bandwidth(samples)?;
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&g| {
            norm * samples
                .iter()
                .map(|&s| (-0.5 * ((g - s) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect())
}

pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 || samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSamples(
            "KDE needs at least two finite samples".into(),
        ));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateSamples("all KDE samples are equal".into()));
    }
    Ok(1.06 * sd * (n as f64).powf(-0.2))
}

/// Evenly spaced grid spanning the samples plus `pad` bandwidths each side.
pub fn kde_grid(samples: &[f64], points: usize, pad: f64) -> Result<Vec<f64>> {
    let h = silverman_bandwidth(samples)?;
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - pad * h;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + pad * h;
    let points = points.max(2);
    Ok((0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::SigmaField;
    use proptest::prelude::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|x| vec![*x]).collect()
    }

    fn brute_mmd(x: &[Vec<f64>], z: &[Vec<f64>], l: f64) -> f64 {
        let k = |a: &Vec<f64>, b: &Vec<f64>| {
            let mut s = 0.0;
            for i in 0..a.len() {
                s += (a[i] - b[i]) * (a[i] - b[i]);
            }
            (-s / (2.0 * l * l)).exp()
        };
        let (n, m) = (x.len() as f64, z.len() as f64);
        let mut xx = 0.0;
        for a in x {
            for b in x {
                xx += k(a, b);
            }
        }
        let mut zz = 0.0;
        for a in z {
            for b in z {
                zz += k(a, b);
            }
        }
        let mut xz = 0.0;
        for a in x {
            for b in z {
                xz += k(a, b);
            }
        }
        xx / (n * n) + zz / (m * m) - 2.0 * xz / (n * m)
    }

    #[test]
    fn single_pair_bandwidth() {
        assert_eq!(median_heuristic(&pts(&[0.0]), &pts(&[1.0])).unwrap(), 1.0);
    }

    #[test]
    fn pooled_enumeration() {
        // Pooled {0,1,2,0,1,2}: 15 distinct pairs with distances
        // 0 ×3, 1 ×8, 2 ×4, so the median (8th smallest) is 1.
        let x = pts(&[0.0, 1.0, 2.0]);
        assert_eq!(median_heuristic(&x, &x).unwrap(), 1.0);
        // Even count: {0, 1, 3, 7} has distances 1,2,3,4,6,7 → (3+4)/2.
        assert_eq!(median_heuristic(&pts(&[0.0, 1.0]), &pts(&[3.0, 7.0])).unwrap(), 3.5);
    }

    #[test]
    fn identical_points_are_degenerate() {
        let x = pts(&[2.0, 2.0]);
        assert!(matches!(median_heuristic(&x, &x), Err(Error::DegenerateSamples(_))));
        assert!(median_heuristic(&pts(&[1.0]), &[]).is_err());
    }

    #[test]
    fn mmd_hand_value() {
        let r = mmd_squared(&pts(&[0.0]), &pts(&[1.0]), 1.0).unwrap();
        assert!((r.mmd2 - (2.0 - 2.0 * (-0.5f64).exp())).abs() < 1e-15);
        assert!((r.mmd2 - 0.786_938_680_574_733).abs() < 1e-12);
    }

    #[test]
    fn mmd_identical_sets() {
        let x = vec![vec![0.3, 1.0], vec![-2.0, 0.5], vec![1.1, 1.1]];
        assert!(mmd_squared(&x, &x, 0.7).unwrap().mmd2 < 1e-12);
    }

    #[test]
    fn mmd_input_errors() {
        assert!(mmd_squared(&[], &pts(&[1.0]), 1.0).is_err());
        assert!(mmd_squared(&pts(&[0.0]), &pts(&[1.0]), 0.0).is_err());
        assert!(mmd_squared(&pts(&[0.0]), &[vec![1.0, 2.0]], 1.0).is_err());
    }

    fn sample_set(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), 1..=10)
    }

    proptest! {
        #[test]
        fn mmd_matches_brute_force(
            (x, z) in (1usize..4).prop_flat_map(|d| (sample_set(d), sample_set(d))),
            l in 0.1f64..5.0,
        ) {
            let got = mmd_squared(&x, &z, l).unwrap().mmd2;
            prop_assert!((got - brute_mmd(&x, &z, l).max(0.0)).abs() < 1e-10);
        }

        #[test]
        fn mmd_symmetric_and_translation_invariant(
            (x, z) in (1usize..3).prop_flat_map(|d| (sample_set(d), sample_set(d))),
            shift in -10.0f64..10.0,
        ) {
            let a = mmd_squared(&x, &z, 1.3).unwrap().mmd2;
            prop_assert_eq!(a, mmd_squared(&z, &x, 1.3).unwrap().mmd2);
            let mv = |s: &[Vec<f64>]| -> Vec<Vec<f64>> {
                s.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect()
            };
            let b = mmd_squared(&mv(&x), &mv(&z), 1.3).unwrap().mmd2;
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn standardisation_uses_reference_moments() {
        let reference = vec![vec![1.0, 10.0], vec![3.0, 30.0]];
        let other = vec![vec![2.0, 20.0]];
        let out = standardize_by(&reference, &[&reference, &other]).unwrap();
        let s = 2.0f64.sqrt();
        assert!((out[0][0][0] + 1.0 / s).abs() < 1e-12);
        assert!((out[0][1][1] - 1.0 / s).abs() < 1e-12);
        assert_eq!(out[1][0], vec![0.0, 0.0]);
    }

    #[test]
    fn thinning() {
        let v: Vec<usize> = (0..10).collect();
        assert_eq!(thin(&v, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(thin(&v, 20), v);
    }

    #[test]
    fn type7_quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert!((quantile_sorted(&s, 0.25) - 1.75).abs() < 1e-15);
    }

    fn fixed_logistic_band(level: f64, sigma: f64, n: usize) -> PredictiveBand {
        let template = ModelTemplate::logistic(0.7);
        let draws = vec![vec![0.0025, 80.0]; n];
        let field = SigmaField::constant(3, sigma * sigma).unwrap();
        predictive_band(
            &draws,
            &template,
            &NoiseModel::Estimated(field),
            &[100.0, 1000.0, 3000.0],
            level,
            1,
            42,
        )
        .unwrap()
    }

    #[test]
    fn constant_noise_halfwidth() {
        let band = fixed_logistic_band(0.95, 2.0, 10_000);
        for w in band.widths() {
            assert!((w / 2.0 - 1.959_964 * 2.0).abs() < 0.15, "{w}");
        }
    }

    #[test]
    fn level_zero_collapses_and_levels_nest() {
        let zero = fixed_logistic_band(0.0, 1.0, 500);
        assert_eq!(zero.lower, zero.median);
        assert_eq!(zero.upper, zero.median);
        let half = fixed_logistic_band(0.5, 1.0, 500);
        let wide = fixed_logistic_band(0.95, 1.0, 500);
        for k in 0..3 {
            assert!(wide.lower[k] <= half.lower[k] && half.upper[k] <= wide.upper[k]);
            assert!(half.lower[k] <= half.median[k] && half.median[k] <= half.upper[k]);
        }
    }

    #[test]
    fn band_follows_sqrt_time_noise() {
        let template = ModelTemplate::logistic(0.7);
        let draws = vec![vec![0.0025, 80.0, 2.3]; 4000];
        let times: Vec<f64> = (1..=20).map(|k| k as f64 * 200.0).collect();
        let band = predictive_band(
            &draws,
            &template,
            &NoiseModel::SqrtTime { fixed_scale: None },
            &times,
            0.95,
            1,
            7,
        )
        .unwrap();
        let w = band.widths();
        assert!(w[19] > 3.0 * w[0]);
        let expected_last = 2.0 * 1.959_964 * 2.3 * (4000.0f64 / 100.0).sqrt();
        assert!((w[19] - expected_last).abs() < 0.05 * expected_last);
    }

    #[test]
    fn kde_symmetry() {
        let d = kde_1d(&[-1.0, 1.0], &[-2.0, -0.5, 0.5, 2.0]).unwrap();
        assert!((d[0] - d[3]).abs() < 1e-15);
        assert!((d[1] - d[2]).abs() < 1e-15);
    }

    #[test]
    fn kde_recovers_standard_normal() {
        let mut r = rng::seeded(3);
        let s: Vec<f64> = (0..5000).map(|_| r.sample(StandardNormal)).collect();
        let grid: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.1).collect();
        let d = kde_1d(&s, &grid).unwrap();
        let peak = d.iter().copied().fold(0.0, f64::max);
        let target = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((peak - target).abs() < 0.15 * target);
    }

    #[test]
    fn kde_integrates_to_one() {
        let mut r = rng::seeded(5);
        let s: Vec<f64> = (0..300).map(|_| r.random::<f64>().powi(3) * 10.0).collect();
        let grid = kde_grid(&s, 4001, 4.0).unwrap();
        let d = kde_1d(&s, &grid).unwrap();
        assert!(d.iter().all(|v| *v >= 0.0));
        let h = grid[1] - grid[0];
        let integral = h * (d.iter().sum::<f64>() - 0.5 * (d[0] + d[d.len() - 1]));
        assert!((0.98..=1.02).contains(&integral), "{integral}");
    }

    #[test]
    fn kde_degenerate() {
        assert!(kde_1d(&[1.0, 1.0, 1.0], &[0.0]).is_err());
        assert!(kde_1d(&[1.0], &[0.0]).is_err());
    }
}
