//! Metropolis–Hastings samplers for the smoothing posteriors.
//!
//! RWM targets v_0 under deterministic dynamics. The Independence Dynamics
//! Sampler, pCN and the pCN Dynamics Sampler target whole paths under
//! stochastic dynamics. Potentials are cached and refreshed only on acceptance.

use crate::error::{Error, Result};
use crate::linalg::{block_diag, cholesky_factor, weighted_sq_norm, Matrix, Vector};
use crate::rng::{streams, RngStream};
use crate::smoothing::{misfit_phi, neg_log_posterior_det, noise_to_signal, Dynamics, SmoothingProblem};
use crate::types::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerKind {
    Rwm,
    Ids,
    Pcn,
    PcnDynamics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McmcConfig {
    pub sampler: SamplerKind,
    pub beta: f64,
    /// RWM proposal covariance; defaults to C_0.
    pub proposal_cov: Option<Matrix>,
    /// Number of retained samples.
    pub samples: usize,
    /// Discarded steps; `None` means 10% of `samples`.
    pub burn_in: Option<usize>,
    pub thin: usize,
    pub seed: u64,
    pub stream: u64,
    /// Fail when more than this fraction of proposals is non-finite.
    pub max_blowup_fraction: Option<f64>,
}

impl McmcConfig {
    pub fn new(sampler: SamplerKind, beta: f64, samples: usize, seed: u64) -> Self {
        McmcConfig {
            sampler,
            beta,
            proposal_cov: None,
            samples,
            burn_in: None,
            thin: 1,
            seed,
            stream: streams::PROPOSAL,
            max_blowup_fraction: None,
        }
    }

    pub fn burn_in_steps(&self) -> usize {
        self.burn_in.unwrap_or(self.samples / 10)
    }
}

/// Position: v_0 (RWM), a flattened path (IDS, pCN) or a noise vector (pCN dynamics).
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub position: Vector,
    /// I_det for RWM, Φ for IDS, Φ + F for pCN, Φ_r for pCN dynamics.
    pub potential: f64,
    pub steps: usize,
    pub accepts: usize,
    pub blowups: usize,
}

impl ChainState {
    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.steps > 0).then(|| self.accepts as f64 / self.steps as f64)
    }
}

/// F(v) = Σ_j ½|Σ^{-1/2}Ψ(v_j)|² − ⟨Σ^{-1/2}v_{j+1}, Σ^{-1/2}Ψ(v_j)⟩.
pub fn compute_f(p: &SmoothingProblem, v: &Trajectory) -> Result<f64> {
    let sigma_inv = p.sigma_inv()?;
    if v.states.len() != p.steps() + 1 {
        return Err(Error::DimensionMismatch { expected: p.steps() + 1, got: v.states.len() });
    }
    let mut total = 0.0;
    for j in 0..p.steps() {
        let f = p.model().apply(&v.states[j])?;
        let sf = sigma_inv * &f;
        total += 0.5 * f.dot(&sf) - v.states[j + 1].dot(&sf);
    }
    Ok(total)
}

/// Precomputed proposal pieces for one sampler on one problem.
pub struct Sampler<'a> {
    problem: &'a SmoothingProblem,
    kind: SamplerKind,
    beta: f64,
    factor: Matrix,
    center: Vector,
}

impl<'a> Sampler<'a> {
    pub fn new(problem: &'a SmoothingProblem, cfg: &McmcConfig) -> Result<Self> {
        let n = problem.state_dim();
        let jj = problem.steps();
        match cfg.sampler {
            SamplerKind::Rwm => {
                if *problem.dynamics() != Dynamics::Deterministic {
                    return Err(Error::StochasticModel);
                }
                if !(cfg.beta >= 0.0) {
                    return Err(Error::InvalidParameter("RWM needs beta >= 0".into()));
                }
                let cov = cfg.proposal_cov.clone().unwrap_or_else(|| problem.prior().cov.clone());
                Ok(Sampler { problem, kind: cfg.sampler, beta: cfg.beta, factor: cholesky_factor(&cov)?, center: Vector::zeros(n) })
            }
            _ => {
                let sigma = problem.sigma()?;
                if cfg.sampler != SamplerKind::Ids && !(cfg.beta > 0.0 && cfg.beta <= 1.0) {
                    return Err(Error::InvalidParameter("pCN needs beta in (0, 1]".into()));
                }
                let c0 = &problem.prior().cov;
                let mut blocks: Vec<&Matrix> = vec![c0];
                blocks.extend(std::iter::repeat_n(sigma, jj));
                let factor = cholesky_factor(&block_diag(&blocks))?;
                let mut center = Vector::zeros((jj + 1) * n);
                center.rows_mut(0, n).copy_from(&problem.prior().mean);
                let beta = if cfg.sampler == SamplerKind::Ids { 1.0 } else { cfg.beta };
                Ok(Sampler { problem, kind: cfg.sampler, beta, factor, center })
            }
        }
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    /// Potential at a position, as cached in the chain state.
    pub fn potential(&self, x: &Vector) -> Result<f64> {
        let p = self.problem;
        let n = p.state_dim();
        let val = match self.kind {
            SamplerKind::Rwm => neg_log_posterior_det(p, x)?,
            SamplerKind::Ids => misfit_phi(p, &Trajectory::from_flat(x, n)?)?,
            SamplerKind::Pcn => {
                let v = Trajectory::from_flat(x, n)?;
                misfit_phi(p, &v)? + compute_f(p, &v)?
            }
            SamplerKind::PcnDynamics => misfit_phi(p, &noise_to_signal(p, x)?)?,
        };
        if !val.is_finite() {
            return Err(Error::NonFiniteState { step: 0 });
        }
        Ok(val)
    }

    pub fn init(&self, position: Vector) -> Result<ChainState> {
        let potential = self.potential(&position)?;
        Ok(ChainState { position, potential, steps: 0, accepts: 0, blowups: 0 })
    }

    fn propose(&self, u: &Vector, rng: &mut RngStream) -> Result<Vector> {
        let z = rng.normal_vector(u.len());
        Ok(match self.kind {
            SamplerKind::Rwm => u + &self.factor * z * self.beta,
            SamplerKind::Ids => {
                let xi = &self.center + &self.factor * z;
                noise_to_signal(self.problem, &xi)?.flatten()
            }
            SamplerKind::Pcn | SamplerKind::PcnDynamics => {
                let keep = (1.0 - self.beta * self.beta).max(0.0).sqrt();
                &self.center + (u - &self.center) * keep + &self.factor * z * self.beta
            }
        })
    }

    /// One Metropolis–Hastings step; a non-finite proposal counts as a rejection.
    pub fn step(&self, s: &mut ChainState, rng: &mut RngStream) -> Result<bool> {
        let w = self.propose(&s.position, rng)?;
        let u = rng.uniform();
        s.steps += 1;
        let pw = match self.potential(&w) {
            Ok(v) => v,
            Err(Error::NonFiniteState { .. }) => {
                s.blowups += 1;
                return Ok(false);
            }
            Err(e) => return Err(e),
        };
        let log_a = (s.potential - pw).min(0.0);
        if u.ln() < log_a || log_a == 0.0 {
            s.position = w;
            s.potential = pw;
            s.accepts += 1;
            return Ok(true);
        }
        Ok(false)
    }

    /// The sample emitted for a position: v_0, or the path v.
    pub fn emit(&self, x: &Vector) -> Result<Vector> {
        match self.kind {
            SamplerKind::PcnDynamics => Ok(noise_to_signal(self.problem, x)?.flatten()),
            _ => Ok(x.clone()),
        }
    }
}

pub fn rwm_step(p: &SmoothingProblem, s: &mut ChainState, cfg: &McmcConfig, rng: &mut RngStream) -> Result<bool> {
    Sampler::new(p, &McmcConfig { sampler: SamplerKind::Rwm, ..cfg.clone() })?.step(s, rng)
}

pub fn ids_step(p: &SmoothingProblem, s: &mut ChainState, rng: &mut RngStream) -> Result<bool> {
    Sampler::new(p, &McmcConfig::new(SamplerKind::Ids, 1.0, 1, rng.seed()))?.step(s, rng)
}

pub fn pcn_step(p: &SmoothingProblem, s: &mut ChainState, cfg: &McmcConfig, rng: &mut RngStream) -> Result<bool> {
    Sampler::new(p, &McmcConfig { sampler: SamplerKind::Pcn, ..cfg.clone() })?.step(s, rng)
}

pub fn pcn_dynamics_step(p: &SmoothingProblem, s: &mut ChainState, cfg: &McmcConfig, rng: &mut RngStream) -> Result<bool> {
    Sampler::new(p, &McmcConfig { sampler: SamplerKind::PcnDynamics, ..cfg.clone() })?.step(s, rng)
}

#[derive(Clone, Debug)]
pub struct ChainSummary {
    pub acceptance_rate: Option<f64>,
    pub steps: usize,
    pub accepts: usize,
    pub blowups: usize,
    pub final_state: ChainState,
}

/// Run burn-in then `samples` retained draws, calling `visit` on each emitted sample.
pub fn run_chain_with(
    p: &SmoothingProblem,
    cfg: &McmcConfig,
    init: Vector,
    mut visit: impl FnMut(&Vector),
) -> Result<ChainSummary> {
    let sampler = Sampler::new(p, cfg)?;
    let mut state = sampler.init(init)?;
    if cfg.samples == 0 {
        return Ok(ChainSummary { acceptance_rate: None, steps: 0, accepts: 0, blowups: 0, final_state: state });
    }
    let mut rng = RngStream::new(cfg.seed, cfg.stream);
    for _ in 0..cfg.burn_in_steps() {
        sampler.step(&mut state, &mut rng)?;
    }
    let thin = cfg.thin.max(1);
    for _ in 0..cfg.samples {
        for _ in 0..thin {
            sampler.step(&mut state, &mut rng)?;
        }
        visit(&sampler.emit(&state.position)?);
    }
    if let Some(limit) = cfg.max_blowup_fraction {
        if state.blowups as f64 > limit * state.steps as f64 {
            return Err(Error::BlowUpLimit { count: state.blowups, steps: state.steps });
        }
    }
    Ok(ChainSummary {
        acceptance_rate: state.acceptance_rate(),
        steps: state.steps,
        accepts: state.accepts,
        blowups: state.blowups,
        final_state: state,
    })
}

#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub samples: Vec<Vector>,
    pub acceptance_rate: Option<f64>,
    /// Running mean of the first coordinate of the samples.
    pub running_mean: Vec<f64>,
    pub summary: ChainSummary,
}

pub fn run_chain(p: &SmoothingProblem, cfg: &McmcConfig, init: Vector) -> Result<ChainOutput> {
    let mut samples = Vec::with_capacity(cfg.samples);
    let mut running_mean = Vec::with_capacity(cfg.samples);
    let mut acc = 0.0;
    let summary = run_chain_with(p, cfg, init, |x| {
        acc += x[0];
        samples.push(x.clone());
        running_mean.push(acc / samples.len() as f64);
    })?;
    Ok(ChainOutput { samples, acceptance_rate: summary.acceptance_rate, running_mean, summary })
}

/// Bound Φ_max = |Γ^{-1/2}|²(|Y_J|² + J h_max²) for observation maps with |h| ≤ h_max.
pub fn phi_max_bound(p: &SmoothingProblem, h_max: f64) -> f64 {
    let gi_norm = p.gamma_inv().symmetric_eigenvalues().iter().cloned().fold(0.0f64, f64::max);
    let y2: f64 = p.data().iter().map(|y| y.norm_squared()).sum();
    gi_norm * (y2 + p.steps() as f64 * h_max * h_max)
}

/// ½|v − m|²_C part of the Gaussian reference measure on paths.
pub fn reference_quadratic(p: &SmoothingProblem, v: &Trajectory) -> Result<f64> {
    let sigma_inv = p.sigma_inv()?;
    let mut total = 0.5 * weighted_sq_norm(&(&v.states[0] - &p.prior().mean), p.c0_inv());
    for s in &v.states[1..] {
        total += 0.5 * weighted_sq_norm(s, sigma_inv);
    }
    Ok(total)
}
