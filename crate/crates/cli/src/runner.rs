//! Experiment execution and artifact writing.

use std::path::{Path, PathBuf};

use assim_core::diagnostics::{summarize, ErrorSeries};
use assim_core::filters::{run_filter, TwinSetup};
use assim_core::mcmc::{run_chain_with, McmcConfig, SamplerKind};
use assim_core::models::{generate_data, simulate};
use assim_core::prob::{empirical_histogram, tv_distance_grid, uniform_grid};
use assim_core::rng::streams;
use assim_core::smoothing::{grid_posterior_1d, signal_to_noise, Dynamics, SmoothingProblem};
use assim_core::variational::{fourdvar, w4dvar};
use assim_core::{GaussianState, Matrix, ObservationSequence, RngStream, Trajectory, Vector};

use crate::config::{Algorithm, ExperimentConfig, ExperimentKind, InitChoice};
use crate::error::CliError;
use crate::output::{plot_script, Cell, Summary, Table, SERIES_VERSION};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Tables and plot script of one experiment, before they are written.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub series: Table,
    pub summary: Summary,
    pub plot: String,
    pub checks: Vec<CheckResult>,
    /// Step at which a filter estimate blew up; the partial run is still written.
    pub blow_up: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub checks: Vec<CheckResult>,
    pub summary: Summary,
}

impl RunReport {
    pub fn failed_checks(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect()
    }
}

pub fn series_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}_series.csv"))
}

pub fn summary_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}_summary.csv"))
}

pub fn error_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}_error.txt"))
}

fn component_names(prefix: &str, n: usize) -> Vec<String> {
    if n == 1 { vec![prefix.to_string()] } else { (1..=n).map(|i| format!("{prefix}{i}")).collect() }
}

fn prior(cfg: &ExperimentConfig) -> GaussianState {
    let n = cfg.m0.len();
    GaussianState { mean: Vector::from_vec(cfg.m0.clone()), cov: Matrix::identity(n, n) * cfg.c0 }
}

fn sigma_matrix(cfg: &ExperimentConfig) -> Option<Matrix> {
    let n = cfg.model.state_dim();
    (cfg.sigma > 0.0).then(|| Matrix::identity(n, n) * (cfg.sigma * cfg.sigma))
}

fn gamma_matrix(cfg: &ExperimentConfig) -> Matrix {
    let m = cfg.observation.obs_dim();
    Matrix::identity(m, m) * (cfg.gamma * cfg.gamma)
}

fn draw_init(choice: &InitChoice, cfg: &ExperimentConfig, rng: &mut RngStream) -> Result<Vector, CliError> {
    let n = cfg.model.state_dim();
    Ok(match choice {
        InitChoice::Prior => prior(cfg).sample(rng)?,
        InitChoice::Uniform => Vector::from_iterator(n, (0..n).map(|_| rng.uniform())),
        InitChoice::Draw { sd } => rng.normal_vector(n) * *sd,
        InitChoice::Value(v) => Vector::from_vec(v.clone()),
    })
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

/// Truth path and data on the truth and observation streams.
fn twin(cfg: &ExperimentConfig, v0: &Vector) -> Result<(Trajectory, ObservationSequence), CliError> {
    let truth = simulate(&cfg.model, v0, cfg.steps, sigma_matrix(cfg).as_ref(), &mut RngStream::new(cfg.seed, streams::TRUTH))?;
    let data = generate_data(&truth, &cfg.observation, &gamma_matrix(cfg), &mut RngStream::new(cfg.seed, streams::OBSERVATION))?;
    Ok((truth, data))
}

fn smoothing_problem(cfg: &ExperimentConfig, data: &ObservationSequence) -> Result<SmoothingProblem, CliError> {
    let dynamics = match sigma_matrix(cfg) {
        Some(sigma) => Dynamics::Stochastic { sigma },
        None => Dynamics::Deterministic,
    };
    Ok(SmoothingProblem::from_sequence(cfg.model.clone(), dynamics, prior(cfg), data)?)
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    match cfg.kind {
        ExperimentKind::Simulate => run_simulate(cfg),
        ExperimentKind::GridPosterior => run_grid(cfg),
        ExperimentKind::Mcmc | ExperimentKind::McmcGrid => run_mcmc(cfg),
        ExperimentKind::Variational => run_variational(cfg),
        ExperimentKind::Filter => run_filter_experiment(cfg),
    }
}

fn run_simulate(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let n = cfg.model.state_dim();
    let v0 = draw_init(&cfg.truth_init, cfg, &mut RngStream::new(cfg.seed, streams::INIT))?;
    let sigma = sigma_matrix(cfg);
    let traj = simulate(&cfg.model, &v0, cfg.steps, sigma.as_ref(), &mut RngStream::new(cfg.seed, streams::TRUTH))?;
    let twin = if cfg.perturbation != 0.0 {
        let mut w0 = v0.clone();
        w0[0] += cfg.perturbation;
        Some(simulate(&cfg.model, &w0, cfg.steps, sigma.as_ref(), &mut RngStream::new(cfg.seed, streams::TRUTH))?)
    } else {
        None
    };
    let mut columns = vec!["j".to_string()];
    columns.extend(component_names("v", n));
    if twin.is_some() {
        columns.extend(component_names("w", n));
        columns.push("error".into());
    }
    let mut series = Table::new(columns.clone());
    let mut errors = Vec::new();
    for (j, v) in traj.states.iter().enumerate() {
        let mut row: Vec<Cell> = vec![j.into()];
        row.extend(v.iter().map(|x| Cell::Real(*x)));
        if let Some(t) = &twin {
            let w = &t.states[j];
            row.extend(w.iter().map(|x| Cell::Real(*x)));
            let e = (w - v).norm();
            errors.push(e);
            row.push(e.into());
        }
        series.push(row);
    }
    let mut summary = Summary::default();
    summary.add("steps", cfg.steps);
    let first: Vec<f64> = traj.states.iter().map(|v| v[0]).collect();
    summary.add("time_mean_v1", summarize(&first).mean);
    summary.add("final_norm", traj.states[cfg.steps].norm());
    let mut checks = Vec::new();
    let mut panels = vec![("v", 0, (1..=n.min(3)).collect::<Vec<_>>())];
    if !errors.is_empty() {
        let max_error = errors.iter().cloned().fold(0.0, f64::max);
        summary.add("max_error", max_error);
        match errors.iter().position(|e| *e > 1.0) {
            Some(j) => summary.add("first_unit_error_step", j),
            None => summary.add("first_unit_error_step", "none"),
        }
        if let Some(bound) = cfg.checks.divergence_min {
            checks.push(check("divergence_min", max_error >= bound, format!("max error {max_error} vs {bound}")));
        }
        panels.push(("error", 0, vec![columns.len() - 1]));
    }
    let plot = plot_script(&cfg.name, &cfg.name, &panels, &columns);
    Ok(Outcome { series, summary, plot, checks, blow_up: None })
}

fn grid_of(cfg: &ExperimentConfig) -> Vec<f64> {
    let g = cfg.grid.expect("grid experiments carry a grid");
    uniform_grid(g.min, g.max, g.step)
}

fn run_grid(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let v0 = draw_init(&cfg.truth_init, cfg, &mut RngStream::new(cfg.seed, streams::INIT))?;
    let (_, data) = twin(cfg, &v0)?;
    let p = smoothing_problem(cfg, &data)?;
    let grid = grid_of(cfg);
    let post = grid_posterior_1d(&p, &grid)?;
    let columns = vec!["v0".to_string(), "posterior".to_string()];
    let mut series = Table::new(columns.clone());
    for (x, d) in post.grid.iter().zip(&post.values) {
        series.push(vec![(*x).into(), (*d).into()]);
    }
    let mut summary = Summary::default();
    summary.add("truth_v0", v0[0]);
    summary.add("grid_points", grid.len());
    summary.add("posterior_mean", post.mean());
    summary.add("posterior_variance", post.variance());
    summary.add("posterior_mode", post.grid[post.argmax()]);
    let plot = plot_script(&cfg.name, &cfg.name, &[("density", 0, vec![1])], &columns);
    Ok(Outcome { series, summary, plot, checks: Vec::new(), blow_up: None })
}

fn run_mcmc(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let Algorithm::Mcmc(m) = &cfg.algorithm else { unreachable!("validated") };
    let n = cfg.model.state_dim();
    let v0 = draw_init(&cfg.truth_init, cfg, &mut RngStream::new(cfg.seed, streams::INIT))?;
    let (truth, data) = twin(cfg, &v0)?;
    let p = smoothing_problem(cfg, &data)?;
    let mcfg = McmcConfig {
        proposal_cov: (m.sampler == SamplerKind::Rwm).then(|| Matrix::identity(n, n) * (cfg.c0 * m.proposal_scale)),
        burn_in: Some(m.burn_in),
        thin: m.thin,
        ..McmcConfig::new(m.sampler, m.beta, m.samples, cfg.seed)
    };
    let init = match m.sampler {
        SamplerKind::Rwm => v0.clone(),
        SamplerKind::Ids | SamplerKind::Pcn => truth.flatten(),
        SamplerKind::PcnDynamics => signal_to_noise(&p, &truth)?,
    };
    let grid_mode = cfg.kind == ExperimentKind::McmcGrid;
    let trace_columns = vec!["k".to_string(), "v0".to_string(), "running_mean".to_string()];
    let mut trace = Table::new(trace_columns.clone());
    let mut xs = Vec::new();
    let (mut k, mut sum, mut sumsq) = (0usize, 0.0, 0.0);
    let chain = run_chain_with(&p, &mcfg, init, |x| {
        let x0 = x[0];
        k += 1;
        sum += x0;
        sumsq += x0 * x0;
        if grid_mode {
            xs.push(x0);
        } else if (k - 1) % cfg.trace_stride == 0 {
            trace.push(vec![k.into(), x0.into(), (sum / k as f64).into()]);
        }
    })?;
    let mean = sum / k as f64;
    let mut summary = Summary::default();
    summary.add("truth_v0", v0[0]);
    summary.add("samples", m.samples);
    summary.add("burn_in", m.burn_in);
    summary.add("steps", chain.steps);
    summary.add("accepts", chain.accepts);
    summary.add("blowups", chain.blowups);
    let acceptance = chain.acceptance_rate.unwrap_or(f64::NAN);
    summary.add("acceptance_rate", acceptance);
    summary.add("mean_v0", mean);
    summary.add("sd_v0", ((sumsq / k as f64 - mean * mean).max(0.0) * k as f64 / (k.max(2) - 1) as f64).sqrt());
    let mut checks = Vec::new();
    if let Some(bound) = cfg.checks.acceptance_min {
        checks.push(check("acceptance_min", acceptance >= bound, format!("acceptance {acceptance} vs {bound}")));
    }
    if !grid_mode {
        let plot = plot_script(&cfg.name, &cfg.name, &[("v_0", 0, vec![1]), ("running mean", 0, vec![2])], &trace_columns);
        return Ok(Outcome { series: trace, summary, plot, checks, blow_up: None });
    }
    let grid = grid_of(cfg);
    let post = grid_posterior_1d(&p, &grid)?;
    let hist = empirical_histogram(&xs, &grid)?;
    let tv = tv_distance_grid(&hist, &post)?;
    summary.add("tv_distance", tv);
    summary.add("grid_points", grid.len());
    if let Some(bound) = cfg.checks.tv_max {
        checks.push(check("tv_max", tv < bound, format!("TV {tv} vs {bound}")));
    }
    let columns = vec!["v0".to_string(), "grid_posterior".to_string(), "histogram".to_string()];
    let mut series = Table::new(columns.clone());
    for ((x, d), h) in post.grid.iter().zip(&post.values).zip(&hist.values) {
        series.push(vec![(*x).into(), (*d).into(), (*h).into()]);
    }
    let plot = plot_script(&cfg.name, &cfg.name, &[("density", 0, vec![1, 2])], &columns);
    Ok(Outcome { series, summary, plot, checks, blow_up: None })
}

fn run_variational(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let Algorithm::Variational(v) = &cfg.algorithm else { unreachable!("validated") };
    let n = cfg.model.state_dim();
    let mut init_rng = RngStream::new(cfg.seed, streams::INIT);
    let v0 = draw_init(&cfg.truth_init, cfg, &mut init_rng)?;
    let (truth, data) = twin(cfg, &v0)?;
    let p = smoothing_problem(cfg, &data)?;
    let len = if v.weak { (cfg.steps + 1) * n } else { n };
    let mut starts: Vec<Vector> = v.starts.chunks(len).map(Vector::from_column_slice).collect();
    let center = if v.weak { Vector::zeros(len) } else { prior(cfg).mean };
    for _ in 0..v.random_starts {
        starts.push(&center + init_rng.normal_vector(len) * v.start_sd);
    }
    if v.start_from_truth {
        starts.push(if v.weak { truth.flatten() } else { v0.clone() });
    }
    let results = if v.weak {
        let paths = starts.iter().map(|s| Trajectory::from_flat(s, n)).collect::<Result<Vec<_>, _>>()?;
        w4dvar(&p, &paths, &v.optimizer)?
    } else {
        fourdvar(&p, &starts, &v.optimizer)?
    };
    let mut summary = Summary::default();
    summary.add("starts", starts.len());
    let mut best = None;
    for (i, r) in results.iter().enumerate() {
        match r {
            Ok(r) => {
                summary.add(format!("start_{i}_objective"), r.objective);
                summary.add(format!("start_{i}_converged"), usize::from(r.converged));
                summary.add(format!("start_{i}_iterations"), r.iterations);
                summary.add(format!("start_{i}_v0"), r.minimizer[0]);
                if r.best {
                    best = Some(r);
                }
            }
            Err(e) => summary.add(format!("start_{i}_error"), e.to_string().as_str()),
        }
    }
    let best = best.ok_or(CliError::Core(assim_core::Error::NonFiniteObjective))?;
    let estimate = if v.weak {
        Trajectory::from_flat(&best.minimizer, n)?
    } else {
        simulate(&cfg.model, &best.minimizer, cfg.steps, None, &mut RngStream::new(cfg.seed, streams::TRUTH))?
    };
    summary.add("best_objective", best.objective);
    summary.add("best_path_error", (estimate.flatten() - truth.flatten()).norm());
    let mut columns = vec!["j".to_string()];
    columns.extend(component_names("truth", n));
    columns.extend(component_names("estimate", n));
    let mut series = Table::new(columns.clone());
    for j in 0..=cfg.steps {
        let mut row: Vec<Cell> = vec![j.into()];
        row.extend(truth.states[j].iter().map(|x| Cell::Real(*x)));
        row.extend(estimate.states[j].iter().map(|x| Cell::Real(*x)));
        series.push(row);
    }
    let plot = plot_script(&cfg.name, &cfg.name, &[("v", 0, vec![1, 1 + n])], &columns);
    Ok(Outcome { series, summary, plot, checks: Vec::new(), blow_up: None })
}

fn run_filter_experiment(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let Algorithm::Filter(kind) = &cfg.algorithm else { unreachable!("validated") };
    let n = cfg.model.state_dim();
    let mut init_rng = RngStream::new(cfg.seed, streams::INIT);
    let truth_v0 = draw_init(&cfg.truth_init, cfg, &mut init_rng)?;
    let mean = match &cfg.filter_init {
        InitChoice::Prior => prior(cfg).mean,
        other => draw_init(other, cfg, &mut init_rng)?,
    };
    let setup = TwinSetup {
        model: cfg.model.clone(),
        obs: cfg.observation.clone(),
        sigma: sigma_matrix(cfg),
        gamma: gamma_matrix(cfg),
        truth_v0,
        filter_init: GaussianState { mean, cov: Matrix::identity(n, n) * (cfg.c0 * cfg.filter_cov_scale) },
        steps: cfg.steps,
        seed: cfg.seed,
    };
    let run = run_filter(&setup, kind)?;
    let mut columns = vec!["j".to_string()];
    columns.extend(component_names("truth", n));
    columns.extend(component_names("mean", n));
    columns.push("trace_cov".into());
    columns.push("error".into());
    let mut series = Table::new(columns.clone());
    let traces: Vec<f64> = run.records.iter().map(|r| r.cov.as_ref().map_or(f64::NAN, |c| c.trace())).collect();
    for (r, t) in run.records.iter().zip(&traces) {
        let mut row: Vec<Cell> = vec![r.j.into()];
        row.extend(r.truth.iter().map(|x| Cell::Real(*x)));
        row.extend(r.mean.iter().map(|x| Cell::Real(*x)));
        row.push((*t).into());
        row.push(r.error.into());
        series.push(row);
    }
    let errors = ErrorSeries::from_errors(run.errors());
    let len = errors.len();
    let window = errors.default_window();
    let early = 0..(len / 100).max(1);
    let stats = errors.summary_over(window.clone());
    let mse = errors.mean_square(window.clone());
    let early_mean = errors.summary_over(early.clone()).mean;
    let mut summary = Summary::default();
    summary.add("filter", kind.label());
    summary.add("records", len);
    match run.blow_up {
        Some(j) => summary.add("blow_up_step", j),
        None => summary.add("blow_up_step", "none"),
    }
    summary.add("window_start", window.start);
    summary.add("error_mean", stats.mean);
    summary.add("error_sd", stats.sd);
    summary.add("error_excess_kurtosis", stats.excess_kurtosis);
    summary.add("error_mean_square", mse);
    summary.add("early_window_end", early.end);
    summary.add("early_error_mean", early_mean);
    summary.add("trace_cov_initial", traces[0]);
    summary.add("trace_cov_final", traces[len - 1]);
    let mut checks = Vec::new();
    if let Some(lo) = cfg.checks.mse_min {
        checks.push(check("mse_min", mse >= lo, format!("mean square error {mse} vs {lo}")));
    }
    if let Some(hi) = cfg.checks.mse_max {
        checks.push(check("mse_max", mse <= hi, format!("mean square error {mse} vs {hi}")));
    }
    if cfg.checks.trace_decreases {
        let (a, b) = (traces[0], traces[len - 1]);
        checks.push(check("trace_decreases", b < a, format!("trace(C) {a} -> {b}")));
    }
    if cfg.checks.error_decreases {
        checks.push(check("error_decreases", stats.mean < early_mean, format!("early {early_mean}, late {}", stats.mean)));
    }
    let trace_col = 1 + 2 * n;
    let plot = plot_script(
        &cfg.name,
        &cfg.name,
        &[("v", 0, vec![1, 1 + n]), ("trace(C)", 0, vec![trace_col]), ("error", 0, vec![trace_col + 1])],
        &columns,
    );
    Ok(Outcome { series, summary, plot, checks, blow_up: run.blow_up })
}

fn write(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    files.push(path);
    Ok(())
}

/// Run an experiment and write its series, summary, plot script and config echo.
///
/// Failures leave a `<name>_error.txt` record next to the other outputs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport, CliError> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let _ = std::fs::remove_file(error_path(dir, &cfg.name));
    let result = execute(cfg).and_then(|mut outcome| {
        for c in &outcome.checks {
            outcome.summary.add(format!("check.{}", c.name), if c.passed { "pass" } else { "fail" });
        }
        let mut files = Vec::new();
        let name = &cfg.name;
        write(series_path(dir, name), &outcome.series.to_csv(&format!("{SERIES_VERSION} {} {name}", cfg.kind.name())), &mut files)?;
        write(summary_path(dir, name), &outcome.summary.to_csv(), &mut files)?;
        write(dir.join(format!("{name}.gp")), &outcome.plot, &mut files)?;
        write(dir.join(format!("{name}_config_echo.txt")), &cfg.echo(), &mut files)?;
        match outcome.blow_up {
            Some(step) => Err(CliError::BlowUp { step }),
            None => Ok(RunReport { files, checks: outcome.checks, summary: outcome.summary }),
        }
    });
    if let Err(e) = &result {
        record_error(dir, &cfg.name, e);
    }
    result
}

pub fn record_error(dir: &Path, name: &str, e: &CliError) {
    let _ = std::fs::create_dir_all(dir);
    let _ = std::fs::write(error_path(dir, name), e.record(name));
}
