//! 4DVAR and weak-constraint 4DVAR via a derivative-free simplex minimizer.

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::smoothing::{neg_log_posterior, neg_log_posterior_det, Dynamics, SmoothingProblem};
use crate::types::Trajectory;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Relative size of the initial simplex edges.
    pub initial_scale: f64,
    /// Edge used for zero components of the start.
    pub zero_step: f64,
    pub tol_objective: f64,
    pub tol_diameter: f64,
    /// Fresh simplex restarts from the best point after convergence.
    pub restarts: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 10_000,
            initial_scale: 0.05,
            zero_step: 0.00025,
            tol_objective: 1e-10,
            tol_diameter: 1e-8,
            restarts: 5,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol_objective > 0.0 && self.tol_diameter > 0.0 && self.initial_scale > 0.0 && self.zero_step > 0.0;
        if !ok {
            return Err(Error::InvalidParameter("optimizer tolerances and scales must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarResult {
    /// v_0 for 4DVAR, the flattened path for w4DVAR.
    pub minimizer: Vector,
    pub objective: f64,
    pub converged: bool,
    pub start: Vector,
    pub iterations: usize,
    pub best: bool,
}

const ALPHA: f64 = 1.0;
const GAMMA: f64 = 2.0;
const RHO: f64 = 0.5;
const SIGMA: f64 = 0.5;

fn eval(f: &impl Fn(&Vector) -> f64, x: &Vector) -> f64 {
    let v = f(x);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn simplex_run(f: &impl Fn(&Vector) -> f64, start: &Vector, cfg: &OptimizerConfig, budget: usize) -> (Vector, f64, bool, usize) {
    let d = start.len();
    let mut pts = vec![start.clone()];
    for i in 0..d {
        let mut x = start.clone();
        x[i] = if x[i] != 0.0 { x[i] * (1.0 + cfg.initial_scale) } else { cfg.zero_step };
        pts.push(x);
    }
    let mut vals: Vec<f64> = pts.iter().map(|x| eval(f, x)).collect();
    let mut it = 0;
    loop {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = vals[1..].iter().map(|v| (v - vals[0]).abs()).fold(0.0, f64::max);
        let diam = pts[1..].iter().map(|p| (p - &pts[0]).amax()).fold(0.0, f64::max);
        if spread <= cfg.tol_objective && diam <= cfg.tol_diameter {
            return (pts[0].clone(), vals[0], true, it);
        }
        if it >= budget {
            return (pts[0].clone(), vals[0], false, it);
        }
        it += 1;

        let centroid = pts[..d].iter().fold(Vector::zeros(d), |acc, p| acc + p) / d as f64;
        let worst = &pts[d];
        let xr = &centroid + (&centroid - worst) * ALPHA;
        let fr = eval(f, &xr);
        if fr < vals[0] {
            let xe = &centroid + (&xr - &centroid) * GAMMA;
            let fe = eval(f, &xe);
            if fe < fr {
                pts[d] = xe;
                vals[d] = fe;
            } else {
                pts[d] = xr;
                vals[d] = fr;
            }
            continue;
        }
        if fr < vals[d - 1] {
            pts[d] = xr;
            vals[d] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[d] {
            let xc = &centroid + (&xr - &centroid) * RHO;
            let fc = eval(f, &xc);
            (xc, fc)
        } else {
            let xc = &centroid + (worst - &centroid) * RHO;
            let fc = eval(f, &xc);
            (xc, fc)
        };
        if fc < vals[d].min(fr) {
            pts[d] = xc;
            vals[d] = fc;
            continue;
        }
        for i in 1..=d {
            pts[i] = &pts[0] + (&pts[i] - &pts[0]) * SIGMA;
            vals[i] = eval(f, &pts[i]);
        }
    }
}

/// Nelder–Mead with coefficients (1, 2, 0.5, 0.5).
pub fn nelder_mead(f: impl Fn(&Vector) -> f64, start: &Vector, cfg: &OptimizerConfig) -> Result<VarResult> {
    cfg.validate()?;
    if !f(start).is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let mut used = 0;
    let (mut x, mut fx, mut conv, n) = simplex_run(&f, start, cfg, cfg.max_iterations);
    used += n;
    for _ in 0..cfg.restarts {
        if !conv || used >= cfg.max_iterations {
            break;
        }
        let (x2, f2, c2, n2) = simplex_run(&f, &x, cfg, cfg.max_iterations - used);
        used += n2;
        let improved = f2 < fx;
        if f2 <= fx {
            x = x2;
            fx = f2;
            conv = c2;
        }
        if !improved {
            break;
        }
    }
    Ok(VarResult { minimizer: x, objective: fx, converged: conv, start: start.clone(), iterations: used, best: false })
}

fn multi_start(f: impl Fn(&Vector) -> f64 + Sync, starts: &[Vector], cfg: &OptimizerConfig) -> Vec<Result<VarResult>> {
    let mut out: Vec<Result<VarResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = starts.iter().map(|s| scope.spawn(|| nelder_mead(&f, s, cfg))).collect();
        handles.into_iter().map(|h| h.join().expect("minimizer thread panicked")).collect()
    });
    out.sort_by(|a, b| match (a, b) {
        (Ok(x), Ok(y)) => x.objective.total_cmp(&y.objective),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        _ => std::cmp::Ordering::Equal,
    });
    if let Some(Ok(first)) = out.first_mut() {
        first.best = true;
    }
    out
}

fn finite_or_inf(r: Result<f64>) -> f64 {
    r.ok().filter(|v| v.is_finite()).unwrap_or(f64::INFINITY)
}

/// Strong-constraint 4DVAR: minimize I_det over v_0 from each start, best first.
pub fn fourdvar(p: &SmoothingProblem, starts: &[Vector], cfg: &OptimizerConfig) -> Result<Vec<Result<VarResult>>> {
    if *p.dynamics() != Dynamics::Deterministic {
        return Err(Error::StochasticModel);
    }
    cfg.validate()?;
    Ok(multi_start(|v| finite_or_inf(neg_log_posterior_det(p, v)), starts, cfg))
}

/// Weak-constraint 4DVAR: minimize I over whole paths.
pub fn w4dvar(p: &SmoothingProblem, starts: &[Trajectory], cfg: &OptimizerConfig) -> Result<Vec<Result<VarResult>>> {
    p.sigma()?;
    cfg.validate()?;
    let n = p.state_dim();
    let flat: Vec<Vector> = starts.iter().map(|t| t.flatten()).collect();
    Ok(multi_start(
        |x| finite_or_inf(Trajectory::from_flat(x, n).and_then(|v| neg_log_posterior(p, &v))),
        &flat,
        cfg,
    ))
}
