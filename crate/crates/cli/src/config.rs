//! Experiment configuration: a line-based `section.key = value` grammar.
//!
//! Blank lines and `#` comments are ignored. Every key is declared in [`KEYS`]
//! with a value type; which keys a config may set depends on the experiment
//! kind, the model and the algorithm, and anything set but not used is an
//! error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use assim_core::filters::{EnsembleOptions, FilterKind, ParticleOptions};
use assim_core::mcmc::SamplerKind;
use assim_core::models::Linear2D;
use assim_core::variational::OptimizerConfig;
use assim_core::{Matrix, ModelSpec, ObservationSpec};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueType {
    Text,
    Real,
    Count,
    Reals,
    Flag,
}

use ValueType::*;

pub const KEYS: &[(&str, ValueType)] = &[
    ("experiment.name", Text),
    ("experiment.program", Text),
    ("experiment.kind", Text),
    ("experiment.seed", Count),
    ("experiment.steps", Count),
    ("experiment.output_dir", Text),
    ("model.type", Text),
    ("model.lambda", Real),
    ("model.l1", Real),
    ("model.l2", Real),
    ("model.alpha", Real),
    ("model.r", Real),
    ("model.a", Real),
    ("model.b", Real),
    ("model.k", Count),
    ("model.forcing", Real),
    ("model.tau", Real),
    ("model.substeps", Count),
    ("observation.type", Text),
    ("noise.sigma", Real),
    ("noise.gamma", Real),
    ("prior.m0", Reals),
    ("prior.c0", Real),
    ("truth.init", Text),
    ("truth.v0", Reals),
    ("truth.perturbation", Real),
    ("filter.init", Text),
    ("filter.mean", Reals),
    ("filter.mean_sd", Real),
    ("filter.cov_scale", Real),
    ("algorithm.name", Text),
    ("algorithm.beta", Real),
    ("algorithm.proposal_scale", Real),
    ("algorithm.samples", Count),
    ("algorithm.burn_in", Count),
    ("algorithm.thin", Count),
    ("algorithm.eta", Real),
    ("algorithm.members", Count),
    ("algorithm.ess_threshold", Real),
    ("algorithm.starts", Reals),
    ("algorithm.random_starts", Count),
    ("algorithm.start_sd", Real),
    ("algorithm.start_from_truth", Flag),
    ("algorithm.max_iterations", Count),
    ("algorithm.restarts", Count),
    ("grid.min", Real),
    ("grid.max", Real),
    ("grid.step", Real),
    ("output.trace_stride", Count),
    ("check.mse_min", Real),
    ("check.mse_max", Real),
    ("check.trace_decreases", Flag),
    ("check.error_decreases", Flag),
    ("check.tv_max", Real),
    ("check.acceptance_min", Real),
    ("check.divergence_min", Real),
];

fn key_type(key: &str) -> Option<(&'static str, ValueType)> {
    KEYS.iter().find(|(k, _)| *k == key).copied()
}

fn key_rank(key: &str) -> usize {
    KEYS.iter().position(|(k, _)| *k == key).unwrap_or(usize::MAX)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Text(String),
    Real(f64),
    Count(u64),
    Reals(Vec<f64>),
    Flag(bool),
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::Text(s) => write!(f, "{s}"),
            Value::Real(x) => write!(f, "{x}"),
            Value::Count(n) => write!(f, "{n}"),
            Value::Reals(xs) => {
                let parts: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
                write!(f, "{}", parts.join(", "))
            }
            Value::Flag(b) => write!(f, "{b}"),
        }
    }
}

fn parse_real(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn parse_value(ty: ValueType, raw: &str) -> Result<Value, String> {
    match ty {
        Text if raw.is_empty() => Err("expected a non-empty value".into()),
        Text => Ok(Value::Text(raw.to_string())),
        Real => parse_real(raw).map(Value::Real).ok_or_else(|| format!("expected a finite number, got `{raw}`")),
        Count => raw
            .parse::<u64>()
            .ok()
            .or_else(|| parse_real(raw).filter(|x| *x >= 0.0 && x.fract() == 0.0 && *x <= 9.007_199_254_740_992e15).map(|x| x as u64))
            .map(Value::Count)
            .ok_or_else(|| format!("expected a non-negative integer, got `{raw}`")),
        Reals => raw
            .split(',')
            .map(|p| parse_real(p.trim()).ok_or_else(|| format!("expected a comma-separated list of numbers, got `{raw}`")))
            .collect::<Result<Vec<_>, _>>()
            .map(Value::Reals),
        Flag => match raw {
            "true" => Ok(Value::Flag(true)),
            "false" => Ok(Value::Flag(false)),
            _ => Err(format!("expected true or false, got `{raw}`")),
        },
    }
}

/// Keys set explicitly in a config text, with the line each came from.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<&'static str, (Value, usize)>,
}

// Equal when the same keys hold the same values, wherever they were written.
impl PartialEq for RawConfig {
    fn eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((ka, (va, _)), (kb, (vb, _)))| ka == kb && va == vb)
    }
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            raw.parse_line(line, i + 1)?;
        }
        Ok(raw)
    }

    /// Parse one `section.key = value` line.
    fn parse_line(&mut self, line: &str, lineno: usize) -> Result<(), CliError> {
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            return Ok(());
        }
        let perr = |message: String| CliError::Parse { line: lineno, message };
        let (key, value) = content.split_once('=').ok_or_else(|| perr(format!("expected `section.key = value`, got `{content}`")))?;
        let key = key.trim();
        let value = value.trim();
        if key.split('.').count() != 2 || key.split('.').any(str::is_empty) {
            return Err(perr(format!("key `{key}` must have the form section.key")));
        }
        let Some((name, ty)) = key_type(key) else {
            let hint = KEYS
                .iter()
                .map(|(k, _)| (strsim::levenshtein(k, key), *k))
                .min()
                .filter(|(d, _)| *d <= 3)
                .map(|(_, k)| format!(" (did you mean `{k}`?)"))
                .unwrap_or_default();
            return Err(perr(format!("unknown key `{key}`{hint}")));
        };
        let v = parse_value(ty, value).map_err(|m| perr(format!("{key}: {m}")))?;
        if let Some((_, first)) = self.entries.get(name) {
            return Err(perr(format!("duplicate key `{key}` (first set on line {first})")));
        }
        self.entries.insert(name, (v, lineno));
        Ok(())
    }

    /// Apply a `section.key=value` override, replacing any existing value.
    pub fn set_override(&mut self, assignment: &str) -> Result<(), CliError> {
        let mut single = RawConfig::default();
        single.parse_line(assignment, 0).map_err(|e| match e {
            CliError::Parse { message, .. } => CliError::Parse { line: 0, message: format!("override: {message}") },
            other => other,
        })?;
        for (k, v) in single.entries {
            self.entries.insert(k, v);
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key).map(|(v, _)| v)
    }

    /// Canonical text: explicitly set keys in schema order, one per line.
    pub fn serialize(&self) -> String {
        let mut keys: Vec<&&str> = self.entries.keys().collect();
        keys.sort_by_key(|k| key_rank(k));
        keys.iter().fold(String::new(), |mut s, k| {
            let _ = writeln!(s, "{} = {}", k, self.entries[**k].0);
            s
        })
    }
}

/// Tracks which keys the typed config consumed and which fell back to defaults.
struct Reader<'a> {
    raw: &'a RawConfig,
    used: Vec<(&'static str, Value, bool)>,
}

fn verr(field: &str, message: impl Into<String>) -> CliError {
    CliError::Validation { field: field.to_string(), message: message.into() }
}

impl<'a> Reader<'a> {
    fn has(&self, key: &str) -> bool {
        self.raw.get(key).is_some()
    }

    fn take(&mut self, key: &'static str, default: Option<Value>) -> Result<Value, CliError> {
        let (v, defaulted) = match (self.raw.get(key), default) {
            (Some(v), _) => (v.clone(), false),
            (None, Some(d)) => (d, true),
            (None, None) => return Err(verr(key, "required but not set")),
        };
        self.used.push((key, v.clone(), defaulted));
        Ok(v)
    }

    fn text(&mut self, key: &'static str, default: Option<&str>) -> Result<String, CliError> {
        match self.take(key, default.map(|d| Value::Text(d.into())))? {
            Value::Text(s) => Ok(s),
            _ => unreachable!("schema type"),
        }
    }

    fn real(&mut self, key: &'static str, default: Option<f64>) -> Result<f64, CliError> {
        match self.take(key, default.map(Value::Real))? {
            Value::Real(x) => Ok(x),
            _ => unreachable!("schema type"),
        }
    }

    fn count(&mut self, key: &'static str, default: Option<u64>) -> Result<usize, CliError> {
        match self.take(key, default.map(Value::Count))? {
            Value::Count(n) => usize::try_from(n).map_err(|_| verr(key, "too large")),
            _ => unreachable!("schema type"),
        }
    }

    fn reals(&mut self, key: &'static str, default: Option<Vec<f64>>) -> Result<Vec<f64>, CliError> {
        match self.take(key, default.map(Value::Reals))? {
            Value::Reals(x) => Ok(x),
            _ => unreachable!("schema type"),
        }
    }

    fn flag(&mut self, key: &'static str, default: Option<bool>) -> Result<bool, CliError> {
        match self.take(key, default.map(Value::Flag))? {
            Value::Flag(b) => Ok(b),
            _ => unreachable!("schema type"),
        }
    }

    fn real_opt(&mut self, key: &'static str) -> Result<Option<f64>, CliError> {
        if self.has(key) { self.real(key, None).map(Some) } else { Ok(None) }
    }

    fn flag_opt(&mut self, key: &'static str) -> Result<bool, CliError> {
        if self.has(key) { self.flag(key, None) } else { Ok(false) }
    }

    fn positive(&mut self, key: &'static str, default: Option<f64>) -> Result<f64, CliError> {
        let x = self.real(key, default)?;
        if x > 0.0 { Ok(x) } else { Err(verr(key, "must be > 0")) }
    }

    fn choice(&mut self, key: &'static str, default: Option<&str>, options: &[&str]) -> Result<String, CliError> {
        let s = self.text(key, default)?;
        if options.contains(&s.as_str()) {
            Ok(s)
        } else {
            Err(verr(key, format!("`{s}` is not one of {}", options.join(", "))))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Simulate,
    GridPosterior,
    Mcmc,
    McmcGrid,
    Variational,
    Filter,
}

impl ExperimentKind {
    pub const NAMES: [&'static str; 6] = ["simulate", "grid_posterior", "mcmc", "mcmc_grid", "variational", "filter"];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::GridPosterior => "grid_posterior",
            ExperimentKind::Mcmc => "mcmc",
            ExperimentKind::McmcGrid => "mcmc_grid",
            ExperimentKind::Variational => "variational",
            ExperimentKind::Filter => "filter",
        }
    }

    fn from_name(s: &str) -> Self {
        match s {
            "simulate" => ExperimentKind::Simulate,
            "grid_posterior" => ExperimentKind::GridPosterior,
            "mcmc" => ExperimentKind::Mcmc,
            "mcmc_grid" => ExperimentKind::McmcGrid,
            "variational" => ExperimentKind::Variational,
            _ => ExperimentKind::Filter,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitChoice {
    /// Draw from N(m_0, C_0).
    Prior,
    /// Each component uniform on [0, 1].
    Uniform,
    /// Draw from N(0, sd² I).
    Draw { sd: f64 },
    Value(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct McmcSettings {
    pub sampler: SamplerKind,
    pub beta: f64,
    pub proposal_scale: f64,
    pub samples: usize,
    pub burn_in: usize,
    pub thin: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariationalSettings {
    pub weak: bool,
    /// Explicit starting points, concatenated (state dimension each for 4DVAR, a whole path for w4DVAR).
    pub starts: Vec<f64>,
    pub random_starts: usize,
    pub start_sd: f64,
    pub start_from_truth: bool,
    pub optimizer: OptimizerConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Algorithm {
    None,
    Mcmc(McmcSettings),
    Variational(VariationalSettings),
    Filter(FilterKind),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checks {
    pub mse_min: Option<f64>,
    pub mse_max: Option<f64>,
    pub trace_decreases: bool,
    pub error_decreases: bool,
    pub tv_max: Option<f64>,
    pub acceptance_min: Option<f64>,
    pub divergence_min: Option<f64>,
}

impl Checks {
    pub fn any(&self) -> bool {
        *self != Checks::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub program: Option<String>,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub steps: usize,
    pub output_dir: PathBuf,
    pub model: ModelSpec,
    pub observation: ObservationSpec,
    /// Model noise standard deviation; 0 means deterministic dynamics.
    pub sigma: f64,
    /// Observation noise standard deviation.
    pub gamma: f64,
    pub m0: Vec<f64>,
    /// Prior covariance C_0 = c0·I.
    pub c0: f64,
    pub truth_init: InitChoice,
    pub perturbation: f64,
    pub filter_init: InitChoice,
    pub filter_cov_scale: f64,
    pub algorithm: Algorithm,
    pub grid: Option<GridSpec>,
    pub trace_stride: usize,
    pub checks: Checks,
    raw: RawConfig,
    resolved: Vec<(&'static str, Value, bool)>,
}

const MODEL_TYPES: [&str; 8] = ["linear_scalar", "diagonal", "jordan", "rotation", "sin", "logistic", "lorenz63", "lorenz96"];

fn read_model(r: &mut Reader) -> Result<ModelSpec, CliError> {
    let ty = r.choice("model.type", None, &MODEL_TYPES)?;
    let model = match ty.as_str() {
        "linear_scalar" => ModelSpec::LinearScalar { lambda: r.real("model.lambda", None)? },
        "diagonal" => ModelSpec::Linear2D(Linear2D::Diagonal { l1: r.real("model.l1", None)?, l2: r.real("model.l2", None)? }),
        "jordan" => ModelSpec::Linear2D(Linear2D::Jordan { lambda: r.real("model.lambda", None)?, alpha: r.real("model.alpha", None)? }),
        "rotation" => ModelSpec::Linear2D(Linear2D::Rotation),
        "sin" => ModelSpec::SinMap { alpha: r.real("model.alpha", None)? },
        "logistic" => {
            let rr = r.real("model.r", None)?;
            if !(0.0..=4.0).contains(&rr) {
                return Err(verr("model.r", "logistic r must lie in [0, 4]"));
            }
            ModelSpec::Logistic { r: rr }
        }
        "lorenz63" => ModelSpec::Lorenz63 {
            a: r.real("model.a", Some(10.0))?,
            b: r.real("model.b", Some(8.0 / 3.0))?,
            r: r.real("model.r", Some(28.0))?,
            tau: r.positive("model.tau", Some(0.01))?,
            substeps: r.count("model.substeps", Some(20))?,
        },
        _ => {
            let k = r.count("model.k", Some(40))?;
            if k < 4 {
                return Err(verr("model.k", "Lorenz '96 needs at least 4 components"));
            }
            ModelSpec::Lorenz96 {
                k,
                f: r.real("model.forcing", Some(8.0))?,
                tau: r.positive("model.tau", Some(0.01))?,
                substeps: r.count("model.substeps", Some(20))?,
            }
        }
    };
    if let ModelSpec::Lorenz63 { substeps: 0, .. } | ModelSpec::Lorenz96 { substeps: 0, .. } = model {
        return Err(verr("model.substeps", "must be >= 1"));
    }
    Ok(model)
}

fn read_init(r: &mut Reader, section: &str, n: usize) -> Result<InitChoice, CliError> {
    let (init_key, value_key): (&'static str, &'static str) =
        if section == "truth" { ("truth.init", "truth.v0") } else { ("filter.init", "filter.mean") };
    let options: &[&str] = if section == "truth" { &["prior", "uniform", "value"] } else { &["prior", "uniform", "draw", "value"] };
    let default = if r.has(value_key) { "value" } else { "prior" };
    Ok(match r.choice(init_key, Some(default), options)?.as_str() {
        "prior" => InitChoice::Prior,
        "uniform" => InitChoice::Uniform,
        "draw" => InitChoice::Draw { sd: r.positive("filter.mean_sd", Some(10.0))? },
        _ => {
            let v = r.reals(value_key, None)?;
            if v.len() != n {
                return Err(verr(value_key, format!("needs {n} components, got {}", v.len())));
            }
            InitChoice::Value(v)
        }
    })
}

fn read_mcmc(r: &mut Reader, kind: ExperimentKind, sigma: f64) -> Result<McmcSettings, CliError> {
    let name = r.choice("algorithm.name", None, &["rwm", "ids", "pcn", "pcnd"])?;
    let sampler = match name.as_str() {
        "rwm" => SamplerKind::Rwm,
        "ids" => SamplerKind::Ids,
        "pcn" => SamplerKind::Pcn,
        _ => SamplerKind::PcnDynamics,
    };
    if sampler == SamplerKind::Rwm && sigma != 0.0 {
        return Err(verr("algorithm.name", "rwm samples the deterministic posterior; set noise.sigma = 0"));
    }
    if sampler != SamplerKind::Rwm && sigma == 0.0 {
        return Err(verr("noise.sigma", format!("{name} needs stochastic dynamics (noise.sigma > 0)")));
    }
    if kind == ExperimentKind::McmcGrid && sampler != SamplerKind::Rwm {
        return Err(verr("algorithm.name", "mcmc_grid compares the v_0 posterior and needs rwm"));
    }
    let (beta, proposal_scale) = match sampler {
        SamplerKind::Rwm => (r.positive("algorithm.beta", None)?, r.positive("algorithm.proposal_scale", Some(1.0))?),
        SamplerKind::Ids => (1.0, 1.0),
        _ => {
            let b = r.real("algorithm.beta", None)?;
            if !(b > 0.0 && b <= 1.0) {
                return Err(verr("algorithm.beta", "pCN needs beta in (0, 1]"));
            }
            (b, 1.0)
        }
    };
    let samples = r.count("algorithm.samples", None)?;
    if samples == 0 {
        return Err(verr("algorithm.samples", "must be >= 1"));
    }
    let burn_in = r.count("algorithm.burn_in", Some((samples / 10) as u64))?;
    let thin = r.count("algorithm.thin", Some(1))?;
    if thin == 0 {
        return Err(verr("algorithm.thin", "must be >= 1"));
    }
    Ok(McmcSettings { sampler, beta, proposal_scale, samples, burn_in, thin })
}

fn read_variational(r: &mut Reader, sigma: f64, n: usize, steps: usize) -> Result<VariationalSettings, CliError> {
    let weak = r.choice("algorithm.name", None, &["4dvar", "w4dvar"])? == "w4dvar";
    if weak && sigma == 0.0 {
        return Err(verr("noise.sigma", "w4dvar needs stochastic dynamics (noise.sigma > 0)"));
    }
    if !weak && sigma != 0.0 {
        return Err(verr("noise.sigma", "4dvar needs deterministic dynamics (noise.sigma = 0)"));
    }
    let starts = r.reals("algorithm.starts", Some(Vec::new()))?;
    let random_default = if starts.is_empty() { 1 } else { 0 };
    let random_starts = r.count("algorithm.random_starts", Some(random_default))?;
    let start_sd = r.positive("algorithm.start_sd", Some(1.0))?;
    let start_from_truth = r.flag("algorithm.start_from_truth", Some(false))?;
    let len = if weak { (steps + 1) * n } else { n };
    if starts.len() % len != 0 {
        return Err(verr("algorithm.starts", format!("length must be a multiple of {len}")));
    }
    if starts.is_empty() && random_starts == 0 && !start_from_truth {
        return Err(verr("algorithm.random_starts", "no starting points configured"));
    }
    let d = OptimizerConfig::default();
    let optimizer = OptimizerConfig {
        max_iterations: r.count("algorithm.max_iterations", Some(d.max_iterations as u64))?,
        restarts: r.count("algorithm.restarts", Some(d.restarts as u64))?,
        ..d
    };
    Ok(VariationalSettings { weak, starts, random_starts, start_sd, start_from_truth, optimizer })
}

fn read_filter(r: &mut Reader, n: usize, gamma: f64) -> Result<FilterKind, CliError> {
    let name = r.choice("algorithm.name", None, &["kf", "3dvar", "exkf", "enkf", "etkf", "sirs", "sirs_op"])?;
    let members = |r: &mut Reader| -> Result<usize, CliError> {
        let m = r.count("algorithm.members", None)?;
        if m < 2 { Err(verr("algorithm.members", "must be >= 2")) } else { Ok(m) }
    };
    Ok(match name.as_str() {
        "kf" => FilterKind::Kalman,
        "3dvar" => {
            let eta = r.positive("algorithm.eta", None)?;
            FilterKind::ThreeDVar { chat: Matrix::identity(n, n) * (gamma * gamma / eta) }
        }
        "exkf" => FilterKind::ExKF,
        "enkf" => FilterKind::EnKF { members: members(r)?, options: EnsembleOptions::default() },
        "etkf" => FilterKind::Etkf { members: members(r)?, options: EnsembleOptions::default() },
        _ => {
            let particles = members(r)?;
            let ess = r.real_opt("algorithm.ess_threshold")?;
            if let Some(e) = ess {
                if !(0.0..=1.0).contains(&e) {
                    return Err(verr("algorithm.ess_threshold", "must lie in [0, 1]"));
                }
            }
            let options = ParticleOptions { ess_threshold: ess };
            if name == "sirs" { FilterKind::Sirs { particles, options } } else { FilterKind::SirsOp { particles, options } }
        }
    })
}

impl ExperimentConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self, CliError> {
        let mut r = Reader { raw: &raw, used: Vec::new() };
        let name = r.text("experiment.name", None)?;
        if !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(verr("experiment.name", "use only letters, digits, '_' and '-'"));
        }
        let program = if r.has("experiment.program") { Some(r.text("experiment.program", None)?) } else { None };
        let kind = ExperimentKind::from_name(&r.choice("experiment.kind", None, &ExperimentKind::NAMES)?);
        let seed = r.count("experiment.seed", None)? as u64;
        let steps = r.count("experiment.steps", None)?;
        if steps == 0 {
            return Err(verr("experiment.steps", "must be >= 1"));
        }
        let output_dir = PathBuf::from(r.text("experiment.output_dir", Some("out"))?);
        let model = read_model(&mut r)?;
        let n = model.state_dim();
        let observation = match r.choice("observation.type", Some("identity"), &["identity", "first_component"])?.as_str() {
            "identity" => ObservationSpec::Identity { dim: n },
            _ => ObservationSpec::FirstComponent { dim: n },
        };
        let sigma = r.real("noise.sigma", Some(0.0))?;
        if sigma < 0.0 {
            return Err(verr("noise.sigma", "must be >= 0"));
        }
        let gamma = if kind == ExperimentKind::Simulate { 1.0 } else { r.positive("noise.gamma", None)? };
        let mut m0 = r.reals("prior.m0", Some(vec![0.0; n]))?;
        if m0.len() == 1 && n > 1 {
            m0 = vec![m0[0]; n];
        }
        if m0.len() != n {
            return Err(verr("prior.m0", format!("needs 1 or {n} components, got {}", m0.len())));
        }
        let c0 = r.positive("prior.c0", Some(1.0))?;
        let truth_init = read_init(&mut r, "truth", n)?;
        let perturbation = if kind == ExperimentKind::Simulate { r.real("truth.perturbation", Some(0.0))? } else { 0.0 };
        let (mut filter_init, mut filter_cov_scale) = (InitChoice::Prior, 1.0);
        let algorithm = match kind {
            ExperimentKind::Simulate | ExperimentKind::GridPosterior => Algorithm::None,
            ExperimentKind::Mcmc | ExperimentKind::McmcGrid => Algorithm::Mcmc(read_mcmc(&mut r, kind, sigma)?),
            ExperimentKind::Variational => Algorithm::Variational(read_variational(&mut r, sigma, n, steps)?),
            ExperimentKind::Filter => {
                filter_init = read_init(&mut r, "filter", n)?;
                filter_cov_scale = r.positive("filter.cov_scale", Some(1.0))?;
                Algorithm::Filter(read_filter(&mut r, n, gamma)?)
            }
        };
        if matches!(kind, ExperimentKind::GridPosterior | ExperimentKind::McmcGrid) {
            if n != 1 {
                return Err(verr("model.type", format!("{} needs a scalar model", kind.name())));
            }
            if sigma != 0.0 {
                return Err(verr("noise.sigma", format!("{} needs deterministic dynamics (noise.sigma = 0)", kind.name())));
            }
        }
        let grid = if matches!(kind, ExperimentKind::GridPosterior | ExperimentKind::McmcGrid) {
            let g = GridSpec {
                min: r.real("grid.min", Some(0.01))?,
                max: r.real("grid.max", Some(0.99))?,
                step: r.positive("grid.step", Some(0.0005))?,
            };
            if !(g.max > g.min) {
                return Err(verr("grid.max", "must exceed grid.min"));
            }
            Some(g)
        } else {
            None
        };
        let trace_stride = if kind == ExperimentKind::Mcmc { r.count("output.trace_stride", Some(1))?.max(1) } else { 1 };
        let mut checks = Checks::default();
        match kind {
            ExperimentKind::Filter => {
                checks.mse_min = r.real_opt("check.mse_min")?;
                checks.mse_max = r.real_opt("check.mse_max")?;
                checks.trace_decreases = r.flag_opt("check.trace_decreases")?;
                checks.error_decreases = r.flag_opt("check.error_decreases")?;
            }
            ExperimentKind::McmcGrid => {
                checks.tv_max = r.real_opt("check.tv_max")?;
                checks.acceptance_min = r.real_opt("check.acceptance_min")?;
            }
            ExperimentKind::Mcmc => checks.acceptance_min = r.real_opt("check.acceptance_min")?,
            ExperimentKind::Simulate => checks.divergence_min = r.real_opt("check.divergence_min")?,
            _ => {}
        }
        let used: Vec<&str> = r.used.iter().map(|(k, _, _)| *k).collect();
        if let Some((k, (_, line))) = raw.entries.iter().find(|(k, _)| !used.contains(k)) {
            return Err(verr(k, format!("set on line {line} but not used by this {} configuration", kind.name())));
        }
        let mut resolved = r.used;
        resolved.sort_by_key(|(k, _, _)| key_rank(k));
        Ok(ExperimentConfig {
            name,
            program,
            kind,
            seed,
            steps,
            output_dir,
            model,
            observation,
            sigma,
            gamma,
            m0,
            c0,
            truth_init,
            perturbation,
            filter_init,
            filter_cov_scale,
            algorithm,
            grid,
            trace_stride,
            checks,
            raw,
            resolved,
        })
    }

    /// Canonical form of the explicitly set keys.
    pub fn serialize(&self) -> String {
        self.raw.serialize()
    }

    pub fn raw(&self) -> &RawConfig {
        &self.raw
    }

    /// Every value the run used, defaults included, as a parseable config.
    pub fn echo(&self) -> String {
        let mut s = String::from("# assim config echo v1\n");
        let defaulted: Vec<&str> = self.resolved.iter().filter(|(_, _, d)| *d).map(|(k, _, _)| *k).collect();
        let _ = writeln!(s, "# defaulted: {}", defaulted.join(", "));
        for (k, v, _) in &self.resolved {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Keys whose value came from a default.
    pub fn defaulted_keys(&self) -> Vec<&'static str> {
        self.resolved.iter().filter(|(_, _, d)| *d).map(|(k, _, _)| *k).collect()
    }

    pub fn with_output_dir(mut self, dir: PathBuf) -> Self {
        let text = Value::Text(dir.display().to_string());
        for entry in self.resolved.iter_mut().filter(|(k, _, _)| *k == "experiment.output_dir") {
            *entry = ("experiment.output_dir", text.clone(), false);
        }
        self.raw.entries.insert("experiment.output_dir", (text, 0));
        self.output_dir = dir;
        self
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    ExperimentConfig::from_raw(RawConfig::parse(text)?)
}
