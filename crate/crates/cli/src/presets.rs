//! Named experiments transcribed from the book's programs p1–p17.

use crate::config::{ExperimentConfig, RawConfig};
use crate::error::CliError;

#[derive(Clone, Copy, Debug)]
pub struct Preset {
    pub name: &'static str,
    pub program: &'static str,
    pub description: &'static str,
    /// Shared settings the preset builds on.
    pub base: &'static str,
    pub text: &'static str,
}

impl Preset {
    pub fn full_text(&self) -> String {
        format!("{}{}", self.text.trim_start(), self.base.trim_start())
    }

    pub fn raw(&self) -> RawConfig {
        RawConfig::parse(&self.full_text()).expect("preset text parses")
    }

    pub fn config(&self, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
        let mut raw = self.raw();
        for o in overrides {
            raw.set_override(o)?;
        }
        ExperimentConfig::from_raw(raw)
    }
}

const SIN_FILTER: &str = "
experiment.kind = filter
experiment.seed = 1
experiment.steps = 1000
model.type = sin
model.alpha = 2.5
noise.sigma = 0.3
noise.gamma = 1
prior.m0 = 0
prior.c0 = 1
filter.init = draw
filter.mean_sd = 10
filter.cov_scale = 10
";

const SIN_MCMC: &str = "
experiment.kind = mcmc
experiment.seed = 1
experiment.steps = 10
model.type = sin
model.alpha = 2.5
noise.sigma = 1
noise.gamma = 1
prior.m0 = 0
prior.c0 = 1
algorithm.samples = 100000
output.trace_stride = 10
";

macro_rules! preset {
    ($name:literal, $program:literal, $description:literal, $body:expr) => {
        preset!($name, $program, $description, "", $body)
    };
    ($name:literal, $program:literal, $description:literal, $base:expr, $body:expr) => {
        Preset { name: $name, program: $program, description: $description, base: $base, text: $body }
    };
}

pub static PRESETS: &[Preset] = &[
    preset!("p1_sin_dynamics", "p1.m", "sample path of the sin map, alpha = 2.5, sigma = 0.25", "
experiment.name = p1_sin_dynamics
experiment.program = p1.m
experiment.kind = simulate
experiment.seed = 1
experiment.steps = 1000
model.type = sin
model.alpha = 2.5
noise.sigma = 0.25
truth.v0 = 1
"),
    preset!("p2_grid_logistic_r2", "p2.m", "grid posterior of v_0 for the logistic map, r = 2", "
experiment.name = p2_grid_logistic_r2
experiment.program = p2.m
experiment.kind = grid_posterior
experiment.seed = 1
experiment.steps = 10
model.type = logistic
model.r = 2
noise.gamma = 0.1
prior.m0 = 0.4
prior.c0 = 0.01
truth.v0 = 0.1
grid.min = 0.01
grid.max = 0.99
grid.step = 0.0005
"),
    preset!("p3_rwm_logistic", "p3.m", "random walk Metropolis for v_0, logistic map r = 4, J = 5", "
experiment.name = p3_rwm_logistic
experiment.program = p3.m
experiment.kind = mcmc
experiment.seed = 1
experiment.steps = 5
model.type = logistic
model.r = 4
noise.gamma = 0.2
prior.m0 = 0.5
prior.c0 = 0.01
truth.v0 = 0.3
algorithm.name = rwm
algorithm.beta = 2
algorithm.samples = 100000
output.trace_stride = 10
"),
    preset!("p4_ids_sin", "p4.m", "independence dynamics sampler, sin map, J = 10", SIN_MCMC, "
experiment.name = p4_ids_sin
experiment.program = p4.m
algorithm.name = ids
"),
    preset!("p5_pcn_sin", "p5.m", "pCN path sampler, sin map, J = 10", SIN_MCMC, "
experiment.name = p5_pcn_sin
experiment.program = p5.m
algorithm.name = pcn
algorithm.beta = 0.2
"),
    preset!("p6_pcnd_sin", "p6.m", "pCN dynamics sampler, sin map, J = 10", SIN_MCMC, "
experiment.name = p6_pcnd_sin
experiment.program = p6.m
algorithm.name = pcnd
algorithm.beta = 0.2
"),
    preset!("p7_w4dvar_sin", "p7.m", "weak constraint 4DVAR, sin map, J = 5, gamma = sigma = 0.1", "
experiment.name = p7_w4dvar_sin
experiment.program = p7.m
experiment.kind = variational
experiment.seed = 1
experiment.steps = 5
model.type = sin
model.alpha = 2.5
noise.sigma = 0.1
noise.gamma = 0.1
prior.m0 = 0
prior.c0 = 1
algorithm.name = w4dvar
algorithm.random_starts = 1
algorithm.max_iterations = 100000
"),
    preset!("fig_kf", "p8.m", "Kalman filter, rotation A_3, H = (1, 0), Sigma = I, Gamma = 1", "
experiment.name = fig_kf
experiment.program = p8.m
experiment.kind = filter
experiment.seed = 1
experiment.steps = 1000
model.type = rotation
observation.type = first_component
noise.sigma = 1
noise.gamma = 1
prior.m0 = 0
prior.c0 = 1
filter.init = draw
filter.mean_sd = 10
filter.cov_scale = 100
algorithm.name = kf
check.trace_decreases = true
check.error_decreases = true
"),
    preset!("p9_3dvar_logistic", "p9.m", "3DVAR on the logistic map, r = 4, gamma^2 = 1e-2, eta = 0.2", "
experiment.name = p9_3dvar_logistic
experiment.program = p9.m
experiment.kind = filter
experiment.seed = 1
experiment.steps = 10000
model.type = logistic
model.r = 4
noise.gamma = 0.1
truth.init = uniform
filter.init = uniform
algorithm.name = 3dvar
algorithm.eta = 0.2
check.mse_min = 0.003
check.mse_max = 0.03
"),
    preset!("p10_3dvar_sin", "p10.m", "3DVAR on the sin map, eta = 0.2", SIN_FILTER, "
experiment.name = p10_3dvar_sin
experiment.program = p10.m
algorithm.name = 3dvar
algorithm.eta = 0.2
"),
    preset!("p11_exkf_sin", "p11.m", "extended Kalman filter on the sin map", SIN_FILTER, "
experiment.name = p11_exkf_sin
experiment.program = p11.m
algorithm.name = exkf
"),
    preset!("p12_enkf_sin", "p12.m", "EnKF with perturbed observations on the sin map, N = 100", SIN_FILTER, "
experiment.name = p12_enkf_sin
experiment.program = p12.m
algorithm.name = enkf
algorithm.members = 100
"),
    preset!("p13_etkf_sin", "p13.m", "ETKF on the sin map, N = 100", SIN_FILTER, "
experiment.name = p13_etkf_sin
experiment.program = p13.m
algorithm.name = etkf
algorithm.members = 100
"),
    preset!("p14_sirs_sin", "p14.m", "bootstrap particle filter on the sin map, N = 100", SIN_FILTER, "
experiment.name = p14_sirs_sin
experiment.program = p14.m
algorithm.name = sirs
algorithm.members = 100
"),
    preset!("p15_sirs_op_sin", "p15.m", "particle filter with optimal proposal on the sin map, N = 100", SIN_FILTER, "
experiment.name = p15_sirs_op_sin
experiment.program = p15.m
algorithm.name = sirs_op
algorithm.members = 100
"),
    preset!("p16_lorenz63", "p16.m", "Lorenz '63 trajectories from nearby initial conditions", "
experiment.name = p16_lorenz63
experiment.program = p16.m
experiment.kind = simulate
experiment.seed = 1
experiment.steps = 2500
model.type = lorenz63
model.tau = 0.01
truth.init = prior
truth.perturbation = 0.0001
check.divergence_min = 1
"),
    preset!("p17_lorenz96", "p17.m", "Lorenz '96 (K = 40, F = 8) trajectories from nearby initial conditions", "
experiment.name = p17_lorenz96
experiment.program = p17.m
experiment.kind = simulate
experiment.seed = 1
experiment.steps = 2000
model.type = lorenz96
model.k = 40
model.forcing = 8
model.tau = 0.01
truth.init = prior
truth.perturbation = 0.0001
"),
    preset!("fig_mcmc1", "p3.m", "RWM histogram against the grid posterior, logistic r = 4, J = 5", "
experiment.name = fig_mcmc1
experiment.program = p3.m
experiment.kind = mcmc_grid
experiment.seed = 1
experiment.steps = 5
model.type = logistic
model.r = 4
noise.gamma = 0.2
prior.m0 = 0.5
prior.c0 = 0.01
truth.v0 = 0.3
algorithm.name = rwm
algorithm.beta = 2
algorithm.samples = 1000000
grid.min = 0.01
grid.max = 0.99
grid.step = 0.0005
check.tv_max = 0.1
"),
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}
