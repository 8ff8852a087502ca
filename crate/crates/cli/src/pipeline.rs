//! Noise estimation followed by posterior sampling, and the files written
//! for each run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hetode::bayes::NOISE_SCALE;
use hetode::metrics::{kde_grid, thin};
use hetode::{
    check_homoscedastic, fit_hetgp, kde_1d, predictive_band, rng, sample_posterior, HetGpFit,
    ModelChoice, ModelTemplate, NoiseChoice, NoiseModel, Posterior, PredictiveBand,
    SamplerOutput, SigmaField, TimeSeries,
};

use crate::config::{LikelihoodMode, RunConfig};
use crate::dataset::{load_dataset, series_to_csv, DatasetBundle};
use crate::error::{CliError, Stage, StageExt};

/// Labels mixed into the master seed for each random stream.
pub const DATA_STREAM: u64 = 0xda7a;
pub const MCMC_STREAM: u64 = 0x3c3c;
pub const BAND_STREAM: u64 = 0xba2d;

pub fn data_seed(master: u64) -> u64 {
    rng::derive_seed(master, &[DATA_STREAM])
}

pub fn mcmc_seed(master: u64, mode: LikelihoodMode) -> u64 {
    rng::derive_seed(master, &[MCMC_STREAM, mode as u64])
}

pub fn band_seed(master: u64) -> u64 {
    rng::derive_seed(master, &[BAND_STREAM])
}

/// Step-one output: the HetGP fit, the optional homoscedastic comparison and
/// the variance field handed to the likelihood.
#[derive(Debug, Clone)]
pub struct NoiseEstimate {
    pub hetgp: HetGpFit,
    pub choice: Option<ModelChoice>,
    pub field: SigmaField,
}

impl NoiseEstimate {
    pub fn chosen(&self) -> NoiseChoice {
        self.choice
            .as_ref()
            .map_or(NoiseChoice::Heteroscedastic, |c| c.chosen)
    }
}

pub fn estimate_noise(data: &TimeSeries, config: &RunConfig) -> Result<NoiseEstimate, CliError> {
    let hetgp_config = config.hetgp_config();
    let hetgp = fit_hetgp(data, &hetgp_config).stage(Stage::NoiseFit)?;
    let choice = if hetgp_config.check_hom {
        Some(check_homoscedastic(data, &hetgp).stage(Stage::NoiseFit)?)
    } else {
        None
    };
    let field = match &choice {
        Some(c) if c.chosen == NoiseChoice::Homoscedastic => {
            SigmaField::constant(data.len(), c.hom_fit.noise_variances()[0]).stage(Stage::NoiseFit)?
        }
        _ => SigmaField::from_hetgp(&hetgp),
    };
    Ok(NoiseEstimate {
        hetgp,
        choice,
        field,
    })
}

/// The likelihood's noise model for `mode`. `estimate` is required for
/// [`LikelihoodMode::Hetgp`].
pub fn noise_model(
    mode: LikelihoodMode,
    estimate: Option<&NoiseEstimate>,
    config: &RunConfig,
) -> Result<NoiseModel, CliError> {
    match mode {
        LikelihoodMode::Homoscedastic => Ok(NoiseModel::Constant),
        LikelihoodMode::TrueSigma => Ok(NoiseModel::SqrtTime {
            fixed_scale: config.true_sigma_scale,
        }),
        LikelihoodMode::Hetgp => estimate
            .map(|e| NoiseModel::Estimated(e.field.clone()))
            .ok_or_else(|| CliError::new(Stage::NoiseFit, "hetgp mode needs a noise estimate")),
    }
}

/// Build the posterior for `mode` and run the sampler.
pub fn sample_mode(
    data: &TimeSeries,
    template: ModelTemplate,
    mode: LikelihoodMode,
    estimate: Option<&NoiseEstimate>,
    config: &RunConfig,
    seed: u64,
) -> Result<(Posterior, SamplerOutput), CliError> {
    let noise = noise_model(mode, estimate, config)?;
    let priors = config.prior_spec_for(mode)?;
    let posterior = Posterior::new(data.clone(), template, noise, priors).stage(Stage::Sampling)?;
    let mut settings = config.sampler_settings();
    settings.seed = seed;
    let starts = posterior.initial_points();
    let out = sample_posterior(&posterior, &starts, &settings).stage(Stage::Sampling)?;
    Ok((posterior, out))
}

/// In-memory result of a full run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dataset: DatasetBundle,
    pub template: ModelTemplate,
    pub noise: Option<NoiseEstimate>,
    pub posterior: Posterior,
    pub samples: SamplerOutput,
    pub rhat: Vec<f64>,
    pub band: PredictiveBand,
}

impl RunOutput {
    pub fn parameter_names(&self) -> Vec<String> {
        self.posterior.parameter_names()
    }
}

/// Evenly spaced grid over the observed time range.
pub fn time_grid(data: &TimeSeries, points: usize) -> Vec<f64> {
    let t = data.times();
    let (lo, hi) = (t[0], t[t.len() - 1]);
    if points < 2 || hi == lo {
        return vec![lo];
    }
    (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect()
}

pub fn band_for(
    draws: &[Vec<f64>],
    posterior: &Posterior,
    config: &RunConfig,
) -> Result<PredictiveBand, CliError> {
    let grid = time_grid(posterior.data(), config.band_points);
    predictive_band(
        &thin(draws, config.band_draws),
        posterior.template(),
        posterior.noise(),
        &grid,
        config.band_level,
        config.band_sims_per_draw,
        band_seed(config.seed),
    )
    .stage(Stage::Prediction)
}

/// Model template for `dataset`. An unset initial condition takes the known
/// value for generated data and the first observed mean otherwise.
pub fn template_for(config: &RunConfig, dataset: &DatasetBundle) -> ModelTemplate {
    let first = match &dataset.truth {
        Some(t) => t.c0,
        None => dataset.first_value(),
    };
    config.template(first)
}

/// Steps one and two on an already loaded dataset.
pub fn infer(config: &RunConfig, dataset: DatasetBundle) -> Result<RunOutput, CliError> {
    let data = &dataset.observations;
    let template = template_for(config, &dataset);
    let noise = match config.mode {
        LikelihoodMode::Hetgp => Some(estimate_noise(data, config)?),
        _ => None,
    };
    let (posterior, samples) = sample_mode(
        data,
        template,
        config.mode,
        noise.as_ref(),
        config,
        mcmc_seed(config.seed, config.mode),
    )?;
    let rhat = match samples.rhat() {
        Some(r) => r.stage(Stage::Sampling)?,
        None => Vec::new(),
    };
    let band = band_for(&samples.pooled_draws(), &posterior, config)?;
    Ok(RunOutput {
        dataset,
        template,
        noise,
        posterior,
        samples,
        rhat,
        band,
    })
}

/// Files written by [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub output: RunOutput,
}

fn write_file(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| CliError::new(Stage::Output, format!("writing {}: {e}", path.display())))?;
    files.push(path);
    Ok(())
}

pub fn draws_csv(names: &[String], samples: &SamplerOutput) -> String {
    let mut out = String::from("chain,");
    out.push_str(&names.join(","));
    out.push('\n');
    for (c, chain) in samples.chains.iter().enumerate() {
        for d in &chain.draws {
            let row: Vec<String> = d.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{c},{}", row.join(","));
        }
    }
    out
}

/// Distinct times with their variance estimate.
pub fn sigma_csv(data: &TimeSeries, field: &SigmaField) -> String {
    let mut out = String::from("t,sigma2\n");
    let mut prev = f64::NAN;
    for (t, v) in data.times().iter().zip(field.at_obs()) {
        if *t != prev {
            let _ = writeln!(out, "{t},{v}");
            prev = *t;
        }
    }
    out
}

pub fn band_csv(band: &PredictiveBand) -> String {
    let mut out = String::from("t,lower,median,upper\n");
    for i in 0..band.times.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            band.times[i], band.lower[i], band.median[i], band.upper[i]
        );
    }
    out
}

pub fn kde_csv(samples: &[f64], points: usize) -> Result<String, CliError> {
    let grid = kde_grid(samples, points, 3.0).stage(Stage::Output)?;
    let density = kde_1d(samples, &grid).stage(Stage::Output)?;
    let mut out = String::from("x,density\n");
    for (x, d) in grid.iter().zip(density) {
        let _ = writeln!(out, "{x},{d}");
    }
    Ok(out)
}

fn diagnostics_text(run: &RunOutput) -> String {
    let mut out = String::new();
    let s = &run.samples;
    let names = run.parameter_names();
    let _ = writeln!(out, "chains = {}", s.chains.len());
    let _ = writeln!(out, "draws_per_chain = {}", s.chains.first().map_or(0, |c| c.len()));
    let _ = writeln!(out, "pilot_acceptance = {}", s.pilot_acceptance);
    for (c, a) in s.acceptance_rates().iter().enumerate() {
        let _ = writeln!(out, "acceptance.chain{c} = {a}");
    }
    for (name, r) in names.iter().zip(&run.rhat) {
        let _ = writeln!(out, "rhat.{name} = {r}");
    }
    let mode = run.posterior.priors().to_original(&s.mode);
    for (name, m) in names.iter().zip(mode) {
        let _ = writeln!(out, "mode.{name} = {m}");
    }
    let _ = writeln!(out, "mode_log_density = {}", s.mode_log_density);
    if let Some(n) = &run.noise {
        let _ = writeln!(out, "hetgp.iterations = {}", n.hetgp.iterations);
        let _ = writeln!(out, "hetgp.converged = {}", n.hetgp.converged);
        let _ = writeln!(out, "hetgp.marginal_loglik = {}", n.hetgp.marginal_loglik);
        let mean = n.hetgp.mean_fit.params();
        let var = n.hetgp.var_fit.params();
        let _ = writeln!(out, "hetgp.mean_lengthscale = {}", mean.lengthscale());
        let _ = writeln!(out, "hetgp.mean_signal_variance = {}", mean.signal_variance());
        let _ = writeln!(out, "hetgp.var_lengthscale = {}", var.lengthscale());
        let _ = writeln!(out, "hetgp.var_signal_variance = {}", var.signal_variance());
        if let Some(c) = &n.choice {
            let _ = writeln!(out, "check_hom.het_loglik = {}", c.het_loglik);
            let _ = writeln!(out, "check_hom.hom_loglik = {}", c.hom_loglik);
        }
        let chosen = match n.chosen() {
            NoiseChoice::Heteroscedastic => "heteroscedastic",
            NoiseChoice::Homoscedastic => "homoscedastic",
        };
        let _ = writeln!(out, "noise_model = {chosen}");
    }
    out
}

/// Run manifest: library version, the full configuration, derived seeds,
/// the artifact list and the run status.
fn manifest_text(
    config: &RunConfig,
    dataset: Option<&DatasetBundle>,
    files: &[PathBuf],
    error: Option<&CliError>,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "version = {}", env!("CARGO_PKG_VERSION"));
    out.push_str(&config.to_document());
    let _ = writeln!(out, "seed.data = {}", data_seed(config.seed));
    let _ = writeln!(out, "seed.mcmc = {}", mcmc_seed(config.seed, config.mode));
    let _ = writeln!(out, "seed.band = {}", band_seed(config.seed));
    if let Some(d) = dataset {
        let _ = writeln!(out, "dataset.source = {}", d.source);
        let _ = writeln!(out, "dataset.units = {}", d.units);
        let _ = writeln!(out, "dataset.observations = {}", d.observations.len());
        if let Some(t) = &d.truth {
            let _ = writeln!(out, "truth.r = {}", t.r);
            let _ = writeln!(out, "truth.K = {}", t.k);
            let _ = writeln!(out, "truth.c0 = {}", t.c0);
            let _ = writeln!(out, "truth.sigma = {}", t.sigma);
        }
    }
    for (i, f) in files.iter().enumerate() {
        let name = f.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        let _ = writeln!(out, "artifact.{i} = {name}");
    }
    match error {
        None => out.push_str("status = ok\n"),
        Some(e) => {
            let _ = writeln!(out, "status = failed");
            let _ = writeln!(out, "failed_stage = {}", e.stage);
            let _ = writeln!(out, "error = {}", e.message.replace('\n', " "));
        }
    }
    out
}

fn write_outputs(run: &RunOutput, config: &RunConfig, dir: &Path, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let names = run.parameter_names();
    write_file(dir, "draws.csv", &draws_csv(&names, &run.samples), files)?;
    let field = match &run.noise {
        Some(n) => n.field.clone(),
        None => posterior_variance_field(run)?,
    };
    write_file(dir, "sigma.csv", &sigma_csv(&run.dataset.observations, &field), files)?;
    write_file(dir, "diagnostics.txt", &diagnostics_text(run), files)?;
    write_file(dir, "band.csv", &band_csv(&run.band), files)?;
    let pooled = run.samples.pooled_draws();
    for (i, name) in names.iter().enumerate() {
        let column: Vec<f64> = pooled.iter().map(|d| d[i]).collect();
        write_file(dir, &format!("kde_{name}.csv"), &kde_csv(&column, config.kde_points)?, files)?;
    }
    Ok(())
}

/// Variance at the observation times implied by the posterior median of a
/// sampled noise scale.
fn posterior_variance_field(run: &RunOutput) -> Result<SigmaField, CliError> {
    let names = run.parameter_names();
    let idx = names
        .iter()
        .position(|n| n == NOISE_SCALE)
        .ok_or_else(|| CliError::new(Stage::Output, "no sampled noise scale"))?;
    let mut sigma: Vec<f64> = run.samples.pooled_draws().iter().map(|d| d[idx]).collect();
    sigma.sort_by(f64::total_cmp);
    let median = hetode::metrics::quantile_sorted(&sigma, 0.5);
    let mut theta = vec![0.0; names.len()];
    theta[idx] = median;
    let times = run.dataset.observations.times();
    let variances = run.posterior.noise().variances_at(times, &theta);
    SigmaField::interpolated(times.to_vec(), variances).stage(Stage::Output)
}

fn execute(
    config: &RunConfig,
    dir: &Path,
    files: &mut Vec<PathBuf>,
    loaded: &mut Option<DatasetBundle>,
) -> Result<RunOutput, CliError> {
    let dataset = load_dataset(
        &config.data,
        config.data_n,
        config.data_replicates,
        data_seed(config.seed),
    )?;
    *loaded = Some(dataset.clone());
    write_file(dir, "data.csv", &series_to_csv(&dataset.observations), files)?;
    let run = infer(config, dataset)?;
    write_outputs(&run, config, dir, files)?;
    Ok(run)
}

/// Load data, run both steps and write every artifact into `config.out`.
///
/// A failing stage still leaves the files written so far, plus a manifest
/// recording the failure.
pub fn run_pipeline(config: &RunConfig) -> Result<RunArtifacts, CliError> {
    config.validate()?;
    let dir = config.out.clone();
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::new(Stage::Output, format!("creating {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    let mut loaded = None;
    let result = execute(config, &dir, &mut files, &mut loaded);
    let manifest = dir.join("manifest.txt");
    let text = manifest_text(config, loaded.as_ref(), &files, result.as_ref().err());
    fs::write(&manifest, text)
        .map_err(|e| CliError::new(Stage::Output, format!("writing manifest: {e}")))?;
    let output = result?;
    Ok(RunArtifacts {
        dir,
        files,
        manifest,
        output,
    })
}

/// Draws file as written by [`draws_csv`]: column names after `chain`, and
/// one `(chain, row)` pair per line.
pub fn read_draws(path: &Path) -> Result<(Vec<String>, Vec<(usize, Vec<f64>)>), CliError> {
    let err = |m: String| CliError::new(Stage::Data, format!("{}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let header = reader.headers().map_err(|e| err(e.to_string()))?.clone();
    if header.get(0) != Some("chain") || header.len() < 2 {
        return Err(err("expected a `chain` column followed by parameters".into()));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let bad = |f: &str| err(format!("row {}: bad value `{f}`", line + 1));
        let chain: usize = rec[0].parse().map_err(|_| bad(&rec[0]))?;
        let row = rec
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().map_err(|_| bad(f)))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != names.len() {
            return Err(err(format!("row {}: expected {} values", line + 1, names.len())));
        }
        rows.push((chain, row));
    }
    if rows.is_empty() {
        return Err(err("no draws".into()));
    }
    Ok((names, rows))
}

/// Posterior predictive band from saved draws, using the configured data,
/// model and likelihood mode.
pub fn predict_from_draws(config: &RunConfig, draws_path: &Path) -> Result<PredictiveBand, CliError> {
    config.validate()?;
    let (names, rows) = read_draws(draws_path)?;
    let dataset = load_dataset(
        &config.data,
        config.data_n,
        config.data_replicates,
        data_seed(config.seed),
    )?;
    let template = template_for(config, &dataset);
    let mut expected: Vec<String> = template.parameter_names().iter().map(|s| s.to_string()).collect();
    if config.samples_sigma(config.mode) {
        expected.push(NOISE_SCALE.to_string());
    }
    if names != expected {
        return Err(CliError::new(
            Stage::Data,
            format!("draws have columns {names:?}, {} mode expects {expected:?}", config.mode),
        ));
    }
    let estimate = match config.mode {
        LikelihoodMode::Hetgp => Some(estimate_noise(&dataset.observations, config)?),
        _ => None,
    };
    let noise = noise_model(config.mode, estimate.as_ref(), config)?;
    let draws: Vec<Vec<f64>> = rows.into_iter().map(|(_, d)| d).collect();
    let grid = time_grid(&dataset.observations, config.band_points);
    predictive_band(
        &thin(&draws, config.band_draws),
        &template,
        &noise,
        &grid,
        config.band_level,
        config.band_sims_per_draw,
        band_seed(config.seed),
    )
    .stage(Stage::Prediction)
}
