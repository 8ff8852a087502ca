//! Run configuration: a flat `key = value` document with dotted keys.
//!
//! Every key has a default. Files are applied over the defaults, then command
//! line overrides over the file. [`RunConfig::to_pairs`] writes every tunable
//! back out in a fixed order, which is what the run manifest records.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hetode::bayes::{ParameterPrior, Prior, PriorSpec, Transform, NOISE_SCALE};
use hetode::ode::{DEFAULT_SIR_STEP, SIR_RECOVERY_RATE};
use hetode::{HetGpConfig, ModelKind, ModelTemplate, ResidualKind, SamplerSettings};

use crate::error::{CliError, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LikelihoodMode {
    Homoscedastic,
    Hetgp,
    TrueSigma,
}

impl LikelihoodMode {
    pub const ALL: [LikelihoodMode; 3] = [
        LikelihoodMode::TrueSigma,
        LikelihoodMode::Hetgp,
        LikelihoodMode::Homoscedastic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LikelihoodMode::Homoscedastic => "homoscedastic",
            LikelihoodMode::Hetgp => "hetgp",
            LikelihoodMode::TrueSigma => "true-sigma",
        }
    }

    /// Whether a noise scale `σ` is sampled alongside the ODE parameters.
    pub fn samples_sigma(&self) -> bool {
        !matches!(self, LikelihoodMode::Hetgp)
    }
}

impl fmt::Display for LikelihoodMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LikelihoodMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "homoscedastic" | "homo" => Ok(LikelihoodMode::Homoscedastic),
            "hetgp" | "hetero" | "heteroscedastic" => Ok(LikelihoodMode::Hetgp),
            "true-sigma" | "true" => Ok(LikelihoodMode::TrueSigma),
            other => Err(format!(
                "unknown mode `{other}` (expected homoscedastic, hetgp or true-sigma)"
            )),
        }
    }
}

/// Where the observations come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// Synthetic logistic data with square-root-in-time noise.
    Generate,
    /// The bundled measles series.
    Measles,
    /// The bundled coral summary, expanded into replicate draws.
    Coral,
    /// A CSV file in one of the supported layouts.
    File(PathBuf),
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Generate => f.write_str("generate"),
            DataSource::Measles => f.write_str("measles"),
            DataSource::Coral => f.write_str("coral"),
            DataSource::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl FromStr for DataSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "" => Err("empty data source".into()),
            "generate" => Ok(DataSource::Generate),
            "measles" => Ok(DataSource::Measles),
            "coral" => Ok(DataSource::Coral),
            path => Ok(DataSource::File(PathBuf::from(path))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    /// Initial condition for the growth models; `None` takes the mean of the
    /// observations at the first time.
    pub c0: Option<f64>,
    pub delta: f64,
    pub sir_step: f64,

    pub data: DataSource,
    /// Size of a generated dataset.
    pub data_n: usize,
    /// Draws per time point when expanding a mean/sd summary.
    pub data_replicates: usize,

    pub mode: LikelihoodMode,
    /// Fixed `σ` for the true-sigma benchmark; `None` samples it.
    pub true_sigma_scale: Option<f64>,
    /// Prior overrides by parameter name, applied over the model defaults.
    pub priors: Vec<ParameterPrior>,

    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub pilot_iterations: usize,
    pub pilot_scale: f64,

    pub hetgp_tolerance: f64,
    pub hetgp_max_iterations: usize,
    pub hetgp_initial_variance: Option<f64>,
    pub check_hom: bool,
    pub debias: bool,
    pub residuals: ResidualKind,

    pub band_level: f64,
    pub band_points: usize,
    /// Posterior draws used for the predictive band (evenly thinned).
    pub band_draws: usize,
    pub band_sims_per_draw: usize,
    pub kde_points: usize,

    pub study_sizes: Vec<usize>,
    pub study_replicates: usize,
    /// Draws per posterior kept for each MMD evaluation.
    pub mmd_draws: usize,
    /// Z-score draws by the benchmark posterior before the MMD.
    pub standardize: bool,

    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hetgp = HetGpConfig::default();
        let mcmc = SamplerSettings::default();
        Self {
            model: ModelKind::Logistic,
            c0: None,
            delta: SIR_RECOVERY_RATE,
            sir_step: DEFAULT_SIR_STEP,
            data: DataSource::Generate,
            data_n: 100,
            data_replicates: 5,
            mode: LikelihoodMode::Hetgp,
            true_sigma_scale: None,
            priors: Vec::new(),
            seed: 1,
            iterations: mcmc.iterations,
            burn_in: mcmc.burn_in,
            chains: mcmc.chains,
            pilot_iterations: mcmc.pilot_iterations,
            pilot_scale: mcmc.pilot_scale,
            hetgp_tolerance: hetgp.tolerance,
            hetgp_max_iterations: hetgp.max_iterations,
            hetgp_initial_variance: hetgp.initial_variance,
            check_hom: hetgp.check_hom,
            debias: hetgp.debias_log_residuals,
            residuals: hetgp.residuals,
            band_level: 0.95,
            band_points: 200,
            band_draws: 1000,
            band_sims_per_draw: 5,
            kde_points: 200,
            study_sizes: vec![20, 100, 500],
            study_replicates: 5,
            mmd_draws: 1000,
            standardize: true,
            out: PathBuf::from("out"),
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::new(Stage::Config, msg)
}

/// Split a document into `(key, value)` pairs. `#` starts a comment; blank
/// lines are skipped.
pub fn parse_document(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected `key = value`", lineno + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(config_err(format!("line {}: empty key", lineno + 1)));
        }
        pairs.push((k.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| config_err(format!("{key}: cannot parse `{v}`: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(config_err(format!("{key}: expected true or false, got `{v}`"))),
    }
}

fn parse_optional_f64(key: &str, v: &str) -> Result<Option<f64>, CliError> {
    if v == "auto" || v.is_empty() {
        Ok(None)
    } else {
        parse_num(key, v).map(Some)
    }
}

fn fmt_optional(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

/// `uniform(a, b)`, `exponential(rate)`, `lognormal(mean, var)` (normal on
/// `ln θ`) or `gaussian(mean, var)`.
pub fn parse_prior(name: &str, text: &str) -> Result<ParameterPrior, CliError> {
    let bad = || {
        config_err(format!(
            "prior.{name}: expected uniform(a, b), exponential(rate), lognormal(m, v) or gaussian(m, v), got `{text}`"
        ))
    };
    let text = text.trim();
    let open = text.find('(').ok_or_else(bad)?;
    if !text.ends_with(')') {
        return Err(bad());
    }
    let family = text[..open].trim().to_ascii_lowercase();
    let args: Vec<f64> = text[open + 1..text.len() - 1]
        .split(',')
        .map(|a| a.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let prior = match (family.as_str(), args.as_slice()) {
        ("uniform", [a, b]) => ParameterPrior::uniform(name, *a, *b),
        ("exponential", [rate]) => ParameterPrior::exponential(name, *rate),
        ("lognormal", [m, v]) => ParameterPrior::log_normal(name, *m, *v),
        ("gaussian", [m, v]) => ParameterPrior::gaussian(name, *m, *v),
        _ => return Err(bad()),
    };
    prior
        .validate()
        .map_err(|e| config_err(format!("prior.{name}: {e}")))?;
    Ok(prior)
}

/// Inverse of [`parse_prior`].
pub fn format_prior(p: &ParameterPrior) -> String {
    match (p.prior, p.transform) {
        (Prior::Uniform { lower, upper }, _) => format!("uniform({lower}, {upper})"),
        (Prior::Exponential { rate }, _) => format!("exponential({rate})"),
        (Prior::Gaussian { mean, variance }, Transform::Log) => {
            format!("lognormal({mean}, {variance})")
        }
        (Prior::Gaussian { mean, variance }, _) => format!("gaussian({mean}, {variance})"),
    }
}

/// Default priors for the model's ODE parameters.
pub fn default_model_priors(model: ModelKind) -> Vec<ParameterPrior> {
    match model {
        ModelKind::Logistic => vec![
            ParameterPrior::uniform("r", 0.001, 1.0),
            ParameterPrior::uniform("K", 10.0, 100.0),
        ],
        ModelKind::Richards => vec![
            ParameterPrior::uniform("alpha", 0.0, 1.0),
            ParameterPrior::exponential("gamma", 1.0),
            ParameterPrior::uniform("K", 0.0, 100.0),
        ],
        ModelKind::Sir => vec![
            ParameterPrior::log_normal("beta", 0.0, 1.0),
            ParameterPrior::log_normal("S0", 0.0, 1.0),
            ParameterPrior::log_normal("I0", 0.0, 1.0),
        ],
    }
}

/// Default prior for the noise scale `σ`.
pub fn default_sigma_prior(model: ModelKind) -> ParameterPrior {
    match model {
        ModelKind::Logistic => ParameterPrior::uniform(NOISE_SCALE, 1.0, 20.0),
        ModelKind::Richards | ModelKind::Sir => ParameterPrior::uniform(NOISE_SCALE, 0.0, 50.0),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("reading {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply(&parse_document(&text)?)?;
        Ok(cfg)
    }

    /// Apply `(key, value)` pairs in order; later pairs win.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<(), CliError> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let v = v.trim();
        match key {
            "model" => {
                self.model = v.parse().map_err(|e| config_err(format!("model: {e}")))?
            }
            "model.c0" => self.c0 = parse_optional_f64(key, v)?,
            "model.delta" => self.delta = parse_num(key, v)?,
            "model.sir_step" => self.sir_step = parse_num(key, v)?,
            "data" => self.data = v.parse().map_err(config_err)?,
            "data.n" => self.data_n = parse_num(key, v)?,
            "data.replicates" => self.data_replicates = parse_num(key, v)?,
            "mode" => self.mode = v.parse().map_err(config_err)?,
            "true_sigma.scale" => self.true_sigma_scale = parse_optional_f64(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "mcmc.iterations" => self.iterations = parse_num(key, v)?,
            "mcmc.burn_in" => self.burn_in = parse_num(key, v)?,
            "mcmc.chains" => self.chains = parse_num(key, v)?,
            "mcmc.pilot_iterations" => self.pilot_iterations = parse_num(key, v)?,
            "mcmc.pilot_scale" => self.pilot_scale = parse_num(key, v)?,
            "hetgp.tolerance" => self.hetgp_tolerance = parse_num(key, v)?,
            "hetgp.max_iterations" => self.hetgp_max_iterations = parse_num(key, v)?,
            "hetgp.initial_variance" => self.hetgp_initial_variance = parse_optional_f64(key, v)?,
            "hetgp.check_hom" => self.check_hom = parse_bool(key, v)?,
            "hetgp.debias" => self.debias = parse_bool(key, v)?,
            "hetgp.residuals" => {
                self.residuals = match v {
                    "loo" | "leave-one-out" => ResidualKind::LeaveOneOut,
                    "fitted" => ResidualKind::Fitted,
                    _ => return Err(config_err(format!("{key}: expected loo or fitted, got `{v}`"))),
                }
            }
            "band.level" => self.band_level = parse_num(key, v)?,
            "band.points" => self.band_points = parse_num(key, v)?,
            "band.draws" => self.band_draws = parse_num(key, v)?,
            "band.sims_per_draw" => self.band_sims_per_draw = parse_num(key, v)?,
            "kde.points" => self.kde_points = parse_num(key, v)?,
            "study.sizes" => {
                self.study_sizes = v
                    .split(',')
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "study.replicates" => self.study_replicates = parse_num(key, v)?,
            "study.mmd_draws" => self.mmd_draws = parse_num(key, v)?,
            "study.standardize" => self.standardize = parse_bool(key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => {
                if let Some(name) = key.strip_prefix("prior.") {
                    let p = parse_prior(name, v)?;
                    self.priors.retain(|q| q.name != name);
                    self.priors.push(p);
                } else {
                    return Err(config_err(format!("unknown key `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// Every tunable as `(key, value)`, in a fixed order. Feeding the result
    /// back through [`RunConfig::apply`] reproduces the configuration.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let sizes: Vec<String> = self.study_sizes.iter().map(|s| s.to_string()).collect();
        let mut pairs: Vec<(&str, String)> = vec![
            ("model", self.model.to_string()),
            ("model.c0", fmt_optional(self.c0)),
            ("model.delta", self.delta.to_string()),
            ("model.sir_step", self.sir_step.to_string()),
            ("data", self.data.to_string()),
            ("data.n", self.data_n.to_string()),
            ("data.replicates", self.data_replicates.to_string()),
            ("mode", self.mode.to_string()),
            ("true_sigma.scale", fmt_optional(self.true_sigma_scale)),
            ("seed", self.seed.to_string()),
            ("mcmc.iterations", self.iterations.to_string()),
            ("mcmc.burn_in", self.burn_in.to_string()),
            ("mcmc.chains", self.chains.to_string()),
            ("mcmc.pilot_iterations", self.pilot_iterations.to_string()),
            ("mcmc.pilot_scale", self.pilot_scale.to_string()),
            ("hetgp.tolerance", self.hetgp_tolerance.to_string()),
            ("hetgp.max_iterations", self.hetgp_max_iterations.to_string()),
            ("hetgp.initial_variance", fmt_optional(self.hetgp_initial_variance)),
            ("hetgp.check_hom", self.check_hom.to_string()),
            ("hetgp.debias", self.debias.to_string()),
            (
                "hetgp.residuals",
                match self.residuals {
                    ResidualKind::LeaveOneOut => "loo",
                    ResidualKind::Fitted => "fitted",
                }
                .to_string(),
            ),
            ("band.level", self.band_level.to_string()),
            ("band.points", self.band_points.to_string()),
            ("band.draws", self.band_draws.to_string()),
            ("band.sims_per_draw", self.band_sims_per_draw.to_string()),
            ("kde.points", self.kde_points.to_string()),
            ("study.sizes", sizes.join(",")),
            ("study.replicates", self.study_replicates.to_string()),
            ("study.mmd_draws", self.mmd_draws.to_string()),
            ("study.standardize", self.standardize.to_string()),
            ("out", self.out.display().to_string()),
        ];
        let resolved = self.prior_spec_for(self.mode);
        let priors: Vec<(String, String)> = match resolved {
            Ok(spec) => spec
                .entries()
                .iter()
                .map(|p| (format!("prior.{}", p.name), format_prior(p)))
                .collect(),
            Err(_) => self
                .priors
                .iter()
                .map(|p| (format!("prior.{}", p.name), format_prior(p)))
                .collect(),
        };
        let mut out: Vec<(String, String)> =
            pairs.drain(..).map(|(k, v)| (k.to_string(), v)).collect();
        out.extend(priors);
        out
    }

    pub fn to_document(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn sampler_settings(&self) -> SamplerSettings {
        SamplerSettings {
            iterations: self.iterations,
            burn_in: self.burn_in,
            chains: self.chains,
            pilot_iterations: self.pilot_iterations,
            pilot_scale: self.pilot_scale,
            seed: self.seed,
        }
    }

    pub fn hetgp_config(&self) -> HetGpConfig {
        HetGpConfig {
            tolerance: self.hetgp_tolerance,
            max_iterations: self.hetgp_max_iterations,
            initial_variance: self.hetgp_initial_variance,
            check_hom: self.check_hom,
            debias_log_residuals: self.debias,
            residuals: self.residuals,
        }
    }

    /// Model template; `first_value` stands in for an unset `C₀`.
    pub fn template(&self, first_value: f64) -> ModelTemplate {
        let c0 = self.c0.unwrap_or(first_value);
        let mut t = match self.model {
            ModelKind::Logistic => ModelTemplate::logistic(c0),
            ModelKind::Richards => ModelTemplate::richards(c0),
            ModelKind::Sir => ModelTemplate::sir(self.delta),
        };
        t.sir_step = self.sir_step;
        t
    }

    /// Whether `σ` is a sampled parameter under `mode`.
    pub fn samples_sigma(&self, mode: LikelihoodMode) -> bool {
        match mode {
            LikelihoodMode::TrueSigma => self.true_sigma_scale.is_none(),
            m => m.samples_sigma(),
        }
    }

    /// Priors for `mode`: model defaults, then `σ` if sampled, with any
    /// configured overrides substituted by name.
    pub fn prior_spec_for(&self, mode: LikelihoodMode) -> Result<PriorSpec, CliError> {
        let mut entries = default_model_priors(self.model);
        if self.samples_sigma(mode) {
            entries.push(default_sigma_prior(self.model));
        }
        for p in &self.priors {
            match entries.iter_mut().find(|e| e.name == p.name) {
                Some(slot) => *slot = p.clone(),
                None if p.name == NOISE_SCALE => {}
                None => {
                    return Err(config_err(format!(
                        "prior.{}: {} model has no parameter `{}`",
                        p.name, self.model, p.name
                    )))
                }
            }
        }
        PriorSpec::new(entries).map_err(|e| config_err(e.to_string()))
    }

    /// Checks that need no data; run before any compute.
    pub fn validate(&self) -> Result<(), CliError> {
        self.sampler_settings()
            .validate()
            .map_err(|e| config_err(format!("mcmc: {e}")))?;
        self.hetgp_config()
            .validate()
            .map_err(|e| config_err(format!("hetgp: {e}")))?;
        self.prior_spec_for(self.mode)?;
        if self.mode == LikelihoodMode::TrueSigma && self.data != DataSource::Generate {
            return Err(config_err(
                "mode true-sigma needs generated data (the true noise law must be known)",
            ));
        }
        if self.data == DataSource::Generate && self.model != ModelKind::Logistic {
            return Err(config_err("the data generator produces logistic data only"));
        }
        if self.data_n < 2 {
            return Err(config_err(format!("data.n must be at least 2, got {}", self.data_n)));
        }
        if self.data_replicates == 0 {
            return Err(config_err("data.replicates must be at least 1"));
        }
        if let Some(s) = self.true_sigma_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(config_err(format!("true_sigma.scale must be positive, got {s}")));
            }
        }
        if let Some(c0) = self.c0 {
            if !(c0 > 0.0 && c0.is_finite()) {
                return Err(config_err(format!("model.c0 must be positive, got {c0}")));
            }
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(config_err(format!("model.delta must be positive, got {}", self.delta)));
        }
        if !(self.sir_step > 0.0 && self.sir_step.is_finite()) {
            return Err(config_err(format!(
                "model.sir_step must be positive, got {}",
                self.sir_step
            )));
        }
        if !(self.band_level > 0.0 && self.band_level < 1.0) {
            return Err(config_err(format!(
                "band.level must lie in (0, 1), got {}",
                self.band_level
            )));
        }
        if self.band_points < 2 || self.kde_points < 2 {
            return Err(config_err("band.points and kde.points must be at least 2"));
        }
        if self.band_draws == 0 || self.band_sims_per_draw == 0 || self.mmd_draws < 2 {
            return Err(config_err(
                "band.draws and band.sims_per_draw must be positive, study.mmd_draws at least 2",
            ));
        }
        if self.study_sizes.iter().any(|&n| n < 2) || self.study_sizes.is_empty() {
            return Err(config_err("study.sizes must be a nonempty list of sizes >= 2"));
        }
        if self.study_replicates == 0 {
            return Err(config_err("study.replicates must be at least 1"));
        }
        Ok(())
    }
}
