//! Fixtures shared by the benchmarks in `benches/`.

use hetode::ode::{logistic_solution, LogisticParams};
use hetode::{rng, TimeSeries};
use rand::Rng as _;
use rand_distr::StandardNormal;

/// Logistic growth over `[1, 4000]` with `σ_t = 2.3 √(t/100)` noise.
pub fn logistic_series(n: usize, seed: u64) -> TimeSeries {
    let times: Vec<f64> = (0..n)
        .map(|i| 1.0 + 3999.0 * i as f64 / (n - 1) as f64)
        .collect();
    let p = LogisticParams { r: 0.0025, k: 80.0, c0: 0.7 };
    let curve = logistic_solution(&p, &times).expect("valid parameters");
    let mut g = rng::seeded(seed);
    let y = curve
        .observed()
        .iter()
        .zip(&times)
        .map(|(c, t)| c + 2.3 * (t / 100.0).sqrt() * g.sample::<f64, _>(StandardNormal))
        .collect();
    TimeSeries::new(times, y).expect("sorted grid")
}

/// `n` standard normal points in `d` dimensions, shifted by `shift`.
pub fn gaussian_cloud(n: usize, d: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut g = rng::seeded(seed);
    (0..n)
        .map(|_| (0..d).map(|_| shift + g.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}
