//! Repeated synthetic-data comparison of the three likelihoods.
//!
//! For every `(size, replicate)` cell a logistic dataset is generated and
//! sampled under the true noise law, the HetGP estimate and a constant
//! variance. The hetgp and homoscedastic posteriors are then compared with
//! the true-noise posterior by squared MMD on the shared parameters `(r, K)`.

use std::fmt::Write as _;

use hetode::metrics::{standardize_by, thin};
use hetode::{median_heuristic, mmd_squared, rng};

use crate::config::{LikelihoodMode, RunConfig};
use crate::dataset::generate_logistic_dataset;
use crate::error::{CliError, Stage, StageExt};
use crate::pipeline::{estimate_noise, sample_mode, template_for};

/// Leading columns common to every likelihood: the ODE parameters.
const SHARED_PARAMETERS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub size: usize,
    pub replicate: usize,
    pub method: LikelihoodMode,
    /// `None` when the cell failed.
    pub mmd: Option<f64>,
    pub error: Option<String>,
}

fn cell_seed(master: u64, size: usize, replicate: usize, stream: u64) -> u64 {
    rng::derive_seed(master, &[size as u64, replicate as u64, stream])
}

/// MMD² between two posteriors on the first `cols` parameters. Both sets are
/// thinned to `max` draws and, if `standardize`, z-scored by the reference.
pub fn posterior_mmd(
    reference: &[Vec<f64>],
    other: &[Vec<f64>],
    cols: usize,
    max: usize,
    standardize: bool,
) -> Result<f64, CliError> {
    let cut = |set: &[Vec<f64>]| -> Vec<Vec<f64>> {
        thin(set, max).into_iter().map(|d| d[..cols].to_vec()).collect()
    };
    let (mut z, mut x) = (cut(reference), cut(other));
    if standardize {
        let sets = standardize_by(&z, &[&x, &z]).stage(Stage::Sampling)?;
        [x, z] = <[_; 2]>::try_from(sets).expect("two sets in, two out");
    }
    let (x, z) = (&x, &z);
    let lambda = median_heuristic(x, z).stage(Stage::Sampling)?;
    Ok(mmd_squared(x, z, lambda).stage(Stage::Sampling)?.mmd2)
}

/// Posterior draws of every mode for one cell.
fn run_cell(
    config: &RunConfig,
    size: usize,
    replicate: usize,
) -> Result<Vec<(LikelihoodMode, Vec<Vec<f64>>)>, CliError> {
    let data_seed = cell_seed(config.seed, size, replicate, 0);
    let dataset = generate_logistic_dataset(size, data_seed)?;
    let data = &dataset.observations;
    let template = template_for(config, &dataset);
    let mut out = Vec::new();
    for (k, mode) in LikelihoodMode::ALL.iter().enumerate() {
        let estimate = match mode {
            LikelihoodMode::Hetgp => Some(estimate_noise(data, config)?),
            _ => None,
        };
        let seed = cell_seed(config.seed, size, replicate, 1 + k as u64);
        let (_, samples) = sample_mode(data, template, *mode, estimate.as_ref(), config, seed)?;
        out.push((*mode, samples.pooled_draws()));
    }
    Ok(out)
}

/// Run every `(size, replicate)` cell. A failing cell yields rows with an
/// error message and the study moves on. `progress` is called after each
/// cell.
pub fn run_simulation_study(
    config: &RunConfig,
    mut progress: impl FnMut(usize, usize, &[StudyRow]),
) -> Result<Vec<StudyRow>, CliError> {
    config.validate()?;
    let mut rows = Vec::new();
    for &size in &config.study_sizes {
        for replicate in 0..config.study_replicates {
            let compared = [LikelihoodMode::Hetgp, LikelihoodMode::Homoscedastic];
            let cell: Vec<StudyRow> = match run_cell(config, size, replicate) {
                Ok(draws) => {
                    let truth = &draws
                        .iter()
                        .find(|(m, _)| *m == LikelihoodMode::TrueSigma)
                        .expect("true-sigma mode is always sampled")
                        .1;
                    compared
                        .iter()
                        .map(|method| {
                            let other = &draws.iter().find(|(m, _)| m == method).expect("sampled").1;
                            let mmd = posterior_mmd(
                                truth,
                                other,
                                SHARED_PARAMETERS,
                                config.mmd_draws,
                                config.standardize,
                            );
                            StudyRow {
                                size,
                                replicate,
                                method: *method,
                                mmd: mmd.as_ref().ok().copied(),
                                error: mmd.err().map(|e| e.to_string()),
                            }
                        })
                        .collect()
                }
                Err(e) => compared
                    .iter()
                    .map(|method| StudyRow {
                        size,
                        replicate,
                        method: *method,
                        mmd: None,
                        error: Some(e.to_string()),
                    })
                    .collect(),
            };
            progress(size, replicate, &cell);
            rows.extend(cell);
        }
    }
    Ok(rows)
}

/// Long format: `size,replicate,method,mmd,error`.
pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut out = String::from("size,replicate,method,mmd,error\n");
    for r in rows {
        let mmd = r.mmd.map_or_else(String::new, |v| v.to_string());
        let err = r
            .error
            .as_deref()
            .map_or_else(String::new, |e| format!("\"{}\"", e.replace('"', "'")));
        let _ = writeln!(out, "{},{},{},{mmd},{err}", r.size, r.replicate, r.method);
    }
    out
}

/// Median MMD of `method` at `size` over successful replicates.
pub fn median_mmd(rows: &[StudyRow], size: usize, method: LikelihoodMode) -> Option<f64> {
    let mut v: Vec<f64> = rows
        .iter()
        .filter(|r| r.size == size && r.method == method)
        .filter_map(|r| r.mmd)
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
