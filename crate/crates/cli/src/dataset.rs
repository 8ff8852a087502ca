//! Dataset ingestion, synthetic generation and the bundled example series.

use std::path::Path;

use hetode::ode::{self, LogisticParams};
use hetode::{rng, OdeModel, TimeSeries};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::config::DataSource;
use crate::error::{CliError, Stage, StageExt};

/// Logistic growth parameters and noise level of the synthetic study data.
pub const TRUE_R: f64 = 0.0025;
pub const TRUE_K: f64 = 80.0;
pub const TRUE_C0: f64 = 0.7;
pub const TRUE_SIGMA: f64 = 2.3;
pub const GENERATOR_START: f64 = 1.0;
pub const GENERATOR_END: f64 = 4000.0;

/// Rejection sampling gives up below this acceptance rate.
pub const MIN_TRUNCATION_ACCEPTANCE: f64 = 1e-3;

pub const MEASLES_CSV: &str = include_str!("../data/measles.csv");
pub const CORAL_SUMMARY_CSV: &str = include_str!("../data/coral_summary.csv");

/// Known generating process of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub r: f64,
    pub k: f64,
    pub c0: f64,
    /// Noise standard deviation at `t = 100`; `σ_t = σ √(t/100)`.
    pub sigma: f64,
}

impl Truth {
    pub fn sd_at(&self, t: f64) -> f64 {
        self.sigma * (t / 100.0).sqrt()
    }
}

/// Per-time mean and standard deviation, the coral summary layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub observations: TimeSeries,
    pub truth: Option<Truth>,
    pub summary: Option<Summary>,
    pub source: String,
    pub units: String,
}

impl DatasetBundle {
    /// Mean of the observations at the first time.
    pub fn first_value(&self) -> f64 {
        let t0 = self.observations.times()[0];
        let first: Vec<f64> = self
            .observations
            .iter()
            .take_while(|(t, _)| *t == t0)
            .map(|(_, y)| y)
            .collect();
        first.iter().sum::<f64>() / first.len() as f64
    }
}

/// `n` noisy logistic observations on an even grid over `[1, 4000]`.
pub fn generate_logistic_dataset(n: usize, seed: u64) -> Result<DatasetBundle, CliError> {
    if n < 2 {
        return Err(CliError::new(
            Stage::Data,
            format!("generator needs at least 2 points, got {n}"),
        ));
    }
    let truth = Truth {
        r: TRUE_R,
        k: TRUE_K,
        c0: TRUE_C0,
        sigma: TRUE_SIGMA,
    };
    let times: Vec<f64> = (0..n)
        .map(|i| GENERATOR_START + (GENERATOR_END - GENERATOR_START) * i as f64 / (n - 1) as f64)
        .collect();
    let model = OdeModel::Logistic(LogisticParams {
        r: truth.r,
        k: truth.k,
        c0: truth.c0,
    });
    let traj = ode::solve(&model, &times).stage(Stage::Data)?;
    let mut r = rng::seeded(seed);
    let values = times
        .iter()
        .zip(traj.observed())
        .map(|(&t, c)| c + truth.sd_at(t) * r.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(DatasetBundle {
        observations: TimeSeries::new(times, values).stage(Stage::Data)?,
        truth: Some(truth),
        summary: None,
        source: format!("generated logistic, n={n}, seed={seed}"),
        units: "days; population size".into(),
    })
}

/// `replicates` draws per time from `N(mean, sd²)` truncated to `(0, ∞)`,
/// flattened into a series with repeated times.
pub fn reconstruct_coral_observations(
    summary: &Summary,
    replicates: usize,
    seed: u64,
) -> Result<DatasetBundle, CliError> {
    if replicates == 0 {
        return Err(CliError::new(Stage::Data, "need at least one replicate per time"));
    }
    if let Some(s) = summary.sd.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(CliError::new(
            Stage::Data,
            format!("standard deviations must be positive, got {s}"),
        ));
    }
    let mut r = rng::seeded(seed);
    let mut times = Vec::with_capacity(summary.times.len() * replicates);
    let mut values = Vec::with_capacity(times.capacity());
    for ((&t, &m), &s) in summary.times.iter().zip(&summary.mean).zip(&summary.sd) {
        let mut kept = 0usize;
        let mut tried = 0usize;
        while kept < replicates {
            let y = m + s * r.sample::<f64, _>(StandardNormal);
            tried += 1;
            if y > 0.0 {
                times.push(t);
                values.push(y);
                kept += 1;
            } else if tried >= 1000 && (kept as f64) < MIN_TRUNCATION_ACCEPTANCE * tried as f64 {
                return Err(CliError::new(
                    Stage::Data,
                    format!(
                        "truncation stall at t={t}: {kept} of {tried} draws positive (mean {m}, sd {s})"
                    ),
                ));
            }
        }
    }
    Ok(DatasetBundle {
        observations: TimeSeries::with_replicates(times, values).stage(Stage::Data)?,
        truth: None,
        summary: Some(summary.clone()),
        source: format!("reconstructed from summary, J={replicates}, seed={seed}"),
        units: "years; percent cover".into(),
    })
}

/// Contents of a dataset CSV, by header.
#[derive(Debug, Clone, PartialEq)]
pub enum CsvData {
    /// `t,y` or `t,y,rep`.
    Series(TimeSeries),
    /// `t,mean,sd`.
    Summary(Summary),
}

fn data_err(msg: impl Into<String>) -> CliError {
    CliError::new(Stage::Data, msg)
}

pub fn parse_csv(text: &str) -> Result<CsvData, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .stage(Stage::Data)?
        .iter()
        .map(str::to_ascii_lowercase)
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.stage(Stage::Data)?;
        if record.len() != header.len() {
            return Err(data_err(format!(
                "row {}: {} fields, header has {}",
                row + 2,
                record.len(),
                header.len()
            )));
        }
        for (col, field) in columns.iter_mut().zip(record.iter()) {
            col.push(field.parse::<f64>().map_err(|_| {
                data_err(format!("row {}: `{field}` is not a number", row + 2))
            })?);
        }
    }
    let mut columns = columns.into_iter();
    let mut next = || columns.next().unwrap_or_default();
    match header.as_slice() {
        ["t", "y"] => Ok(CsvData::Series(
            TimeSeries::new(next(), next()).stage(Stage::Data)?,
        )),
        ["t", "y", "rep"] => Ok(CsvData::Series(
            TimeSeries::with_replicates(next(), next()).stage(Stage::Data)?,
        )),
        ["t", "mean", "sd"] => {
            let summary = Summary {
                times: next(),
                mean: next(),
                sd: next(),
            };
            if summary.times.is_empty() {
                return Err(data_err("summary has no rows"));
            }
            if summary.times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(data_err("summary times must be strictly increasing"));
            }
            if summary.sd.iter().any(|s| !(*s > 0.0)) {
                return Err(data_err("sd column must be strictly positive"));
            }
            Ok(CsvData::Summary(summary))
        }
        other => Err(data_err(format!(
            "unrecognised header {other:?}; expected t,y or t,y,rep or t,mean,sd"
        ))),
    }
}

pub fn read_csv(path: &Path) -> Result<CsvData, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| data_err(format!("reading {}: {e}", path.display())))?;
    parse_csv(&text)
}

/// `t,y` for strictly increasing times, `t,y,rep` otherwise. Values are
/// written in shortest round-trip form, so reading the file back gives the
/// same series bit for bit.
pub fn series_to_csv(series: &TimeSeries) -> String {
    let mut out = String::new();
    if series.is_replicated() {
        out.push_str("t,y,rep\n");
        let mut rep = 0usize;
        let mut prev = f64::NAN;
        for (t, y) in series.iter() {
            rep = if t == prev { rep + 1 } else { 1 };
            prev = t;
            out.push_str(&format!("{t},{y},{rep}\n"));
        }
    } else {
        out.push_str("t,y\n");
        for (t, y) in series.iter() {
            out.push_str(&format!("{t},{y}\n"));
        }
    }
    out
}

/// Load the configured dataset. Summaries are expanded into replicate draws
/// seeded from `seed`; the generator is seeded from `seed` too.
pub fn load_dataset(
    source: &DataSource,
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<DatasetBundle, CliError> {
    let from_csv = |data: CsvData, source: String, units: &str| match data {
        CsvData::Series(observations) => Ok(DatasetBundle {
            observations,
            truth: None,
            summary: None,
            source,
            units: units.into(),
        }),
        CsvData::Summary(summary) => {
            let mut b = reconstruct_coral_observations(&summary, replicates, seed)?;
            b.source = format!("{source}; {}", b.source);
            Ok(b)
        }
    };
    match source {
        DataSource::Generate => generate_logistic_dataset(n, seed),
        DataSource::Measles => from_csv(
            parse_csv(MEASLES_CSV)?,
            "bundled measles series".into(),
            "weeks; cases",
        ),
        DataSource::Coral => from_csv(
            parse_csv(CORAL_SUMMARY_CSV)?,
            "bundled coral summary".into(),
            "years; percent cover",
        ),
        DataSource::File(path) => from_csv(read_csv(path)?, path.display().to_string(), "as supplied"),
    }
}
