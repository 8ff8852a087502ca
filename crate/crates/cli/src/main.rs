use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hetode::metrics::quantile_sorted;
use hetode::{r0_posterior, Chain};
use hetode_cli::config::RunConfig;
use hetode_cli::dataset::{load_dataset, series_to_csv};
use hetode_cli::error::{CliError, Stage};
use hetode_cli::pipeline::{self, band_csv, data_seed, estimate_noise, kde_csv, sigma_csv};
use hetode_cli::study::{median_mmd, run_simulation_study, study_csv};
use hetode_cli::LikelihoodMode;

#[derive(Parser)]
#[command(name = "hetode", version, about = "ODE parameter inference under heteroscedastic noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Likelihood mode
    #[arg(long, global = true, value_parser = ["homoscedastic", "hetgp", "true-sigma"])]
    mode: Option<String>,
    /// ODE model
    #[arg(long, global = true, value_parser = ["logistic", "richards", "sir"])]
    model: Option<String>,
    /// Extra configuration override, `key=value`; may be repeated
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset to data.csv
    Generate,
    /// Fit the heteroscedastic GP and write the variance estimate
    FitNoise,
    /// Full run: noise estimate, posterior sampling and all artifacts
    Infer,
    /// Repeated comparison of the likelihood modes on synthetic data
    Study,
    /// Predictive band from a saved draws file
    Predict {
        #[arg(long)]
        draws: PathBuf,
    },
    /// Basic reproduction number from SIR draws
    R0 {
        #[arg(long)]
        draws: PathBuf,
    },
}

fn build_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::new(Stage::Config, format!("--set {o}: expected key=value")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(m) = &common.model {
        cfg.set("model", m)?;
    }
    if let Some(m) = &common.mode {
        cfg.set("mode", m)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::new(Stage::Output, format!("creating {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| CliError::new(Stage::Output, format!("writing {}: {e}", path.display())))?;
    Ok(path)
}

fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    let d = load_dataset(&cfg.data, cfg.data_n, cfg.data_replicates, data_seed(cfg.seed))?;
    let path = write(&cfg.out, "data.csv", &series_to_csv(&d.observations))?;
    println!("{} observations -> {}", d.observations.len(), path.display());
    Ok(())
}

fn fit_noise(cfg: &RunConfig) -> Result<(), CliError> {
    let d = load_dataset(&cfg.data, cfg.data_n, cfg.data_replicates, data_seed(cfg.seed))?;
    let est = estimate_noise(&d.observations, cfg)?;
    let path = write(&cfg.out, "sigma.csv", &sigma_csv(&d.observations, &est.field))?;
    let mut summary = String::new();
    let fit = &est.hetgp;
    let _ = writeln!(summary, "iterations = {}", fit.iterations);
    let _ = writeln!(summary, "converged = {}", fit.converged);
    let _ = writeln!(summary, "marginal_loglik = {}", fit.marginal_loglik);
    if let Some(c) = &est.choice {
        let _ = writeln!(summary, "het_loglik = {}", c.het_loglik);
        let _ = writeln!(summary, "hom_loglik = {}", c.hom_loglik);
    }
    let _ = writeln!(summary, "noise_model = {:?}", est.chosen());
    write(&cfg.out, "noise.txt", &summary)?;
    print!("{summary}");
    println!("variance estimate -> {}", path.display());
    Ok(())
}

fn infer(cfg: &RunConfig) -> Result<(), CliError> {
    let art = pipeline::run_pipeline(cfg)?;
    let names = art.output.parameter_names();
    for (name, r) in names.iter().zip(&art.output.rhat) {
        println!("rhat.{name} = {r:.4}");
    }
    println!("{} files -> {}", art.files.len() + 1, art.dir.display());
    Ok(())
}

fn study(cfg: &RunConfig) -> Result<(), CliError> {
    let rows = run_simulation_study(cfg, |size, rep, cell| {
        for r in cell {
            match (r.mmd, &r.error) {
                (Some(m), _) => eprintln!("size {size} replicate {rep} {}: mmd {m:.5}", r.method),
                (None, Some(e)) => eprintln!("size {size} replicate {rep} {}: failed {e}", r.method),
                (None, None) => {}
            }
        }
    })?;
    let path = write(&cfg.out, "study.csv", &study_csv(&rows))?;
    let mut manifest = format!("version = {}\n", env!("CARGO_PKG_VERSION"));
    manifest.push_str(&cfg.to_document());
    let failed = rows.iter().filter(|r| r.mmd.is_none()).count();
    let _ = writeln!(manifest, "rows = {}", rows.len());
    let _ = writeln!(manifest, "failed_rows = {failed}");
    write(&cfg.out, "manifest.txt", &manifest)?;
    for &size in &cfg.study_sizes {
        let het = median_mmd(&rows, size, LikelihoodMode::Hetgp);
        let hom = median_mmd(&rows, size, LikelihoodMode::Homoscedastic);
        println!("size {size}: median mmd hetgp {het:?} homoscedastic {hom:?}");
    }
    println!("{} rows -> {}", rows.len(), path.display());
    Ok(())
}

fn predict(cfg: &RunConfig, draws: &Path) -> Result<(), CliError> {
    let band = pipeline::predict_from_draws(cfg, draws)?;
    let path = write(&cfg.out, "band.csv", &band_csv(&band))?;
    println!("band over {} times -> {}", band.times.len(), path.display());
    Ok(())
}

fn r0(cfg: &RunConfig, draws: &Path) -> Result<(), CliError> {
    let (names, rows) = pipeline::read_draws(draws)?;
    let col = |n: &str| {
        names
            .iter()
            .position(|x| x == n)
            .ok_or_else(|| CliError::new(Stage::Data, format!("draws have no `{n}` column")))
    };
    let idx = [col("beta")?, col("S0")?, col("I0")?];
    let chain = Chain {
        draws: rows.iter().map(|(_, d)| idx.iter().map(|&i| d[i]).collect()).collect(),
        transformed: Vec::new(),
        accepted: 0,
        total: 0,
        burn_in: 0,
        seed: 0,
    };
    let values = r0_posterior(&chain, cfg.delta);
    let mut out = String::from("chain,r0\n");
    for ((c, _), v) in rows.iter().zip(&values) {
        let _ = writeln!(out, "{c},{v}");
    }
    write(&cfg.out, "r0.csv", &out)?;
    write(&cfg.out, "kde_r0.csv", &kde_csv(&values, cfg.kde_points)?)?;
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let q = |p| quantile_sorted(&sorted, p);
    println!(
        "R0 median {:.4}, 95% interval [{:.4}, {:.4}] over {} draws",
        q(0.5),
        q(0.025),
        q(0.975),
        sorted.len()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = build_config(&cli.common)?;
    match cli.command {
        Command::Generate => generate(&cfg),
        Command::FitNoise => fit_noise(&cfg),
        Command::Infer => infer(&cfg),
        Command::Study => study(&cfg),
        Command::Predict { draws } => predict(&cfg, &draws),
        Command::R0 { draws } => r0(&cfg, &draws),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hetode: {e}");
            ExitCode::FAILURE
        }
    }
}

