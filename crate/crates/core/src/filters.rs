//! Sequential assimilation: Kalman filter, 3DVAR, ExKF, EnKF, ETKF, particle
//! filters with standard and optimal proposals, and the synchronization filter.

use crate::error::{Error, Result};
use crate::linalg::{cholesky_factor, spd_inverse, spd_solve, symmetrize, weighted_sq_norm, Matrix, Vector};
use crate::models::{generate_data, simulate, ModelSpec, ObservationSequence, ObservationSpec};
use crate::prob::{multinomial_indices, WeightedSamples};
use crate::rng::{streams, RngStream};
use crate::types::{sample_with_factor, GaussianState, Trajectory};

/// m̂ = M m, Ĉ = M C Mᵀ + Σ.
pub fn kf_predict(m: &Vector, c: &Matrix, mm: &Matrix, sigma: &Matrix) -> Result<(Vector, Matrix)> {
    let n = m.len();
    if mm.ncols() != n || c.nrows() != n || sigma.nrows() != mm.nrows() {
        return Err(Error::DimensionMismatch { expected: n, got: mm.ncols() });
    }
    Ok((mm * m, symmetrize(&(mm * c * mm.transpose() + sigma))))
}

fn check_update(mhat: &Vector, chat: &Matrix, h: &Matrix, gamma: &Matrix, y: &Vector) -> Result<()> {
    let n = mhat.len();
    if chat.nrows() != n || chat.ncols() != n || h.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: h.ncols() });
    }
    if gamma.nrows() != h.nrows() || y.len() != h.nrows() {
        return Err(Error::DimensionMismatch { expected: h.nrows(), got: y.len() });
    }
    Ok(())
}

/// C⁻¹ = Ĉ⁻¹ + HᵀΓ⁻¹H, C⁻¹m = Ĉ⁻¹m̂ + HᵀΓ⁻¹y.
pub fn kf_update_precision(
    mhat: &Vector,
    chat: &Matrix,
    h: &Matrix,
    gamma: &Matrix,
    y: &Vector,
) -> Result<(Vector, Matrix)> {
    check_update(mhat, chat, h, gamma, y)?;
    let chat_inv = spd_inverse(chat)?;
    let ht_gi = h.transpose() * spd_inverse(gamma)?;
    let prec = &chat_inv + &ht_gi * h;
    let c = spd_inverse(&prec)?;
    let m = &c * (chat_inv * mhat + ht_gi * y);
    Ok((m, c))
}

#[derive(Clone, Debug)]
pub struct GainUpdate {
    pub mean: Vector,
    pub cov: Matrix,
    pub gain: Matrix,
    pub innovation: Vector,
    pub s: Matrix,
}

/// K = ĈHᵀ(HĈHᵀ + Γ)⁻¹; the only inversion happens in data space.
pub fn kalman_gain(chat: &Matrix, h: &Matrix, gamma: &Matrix) -> Result<Matrix> {
    let s = h * chat * h.transpose() + gamma;
    Ok(spd_solve(&s, &(h * chat))?.transpose())
}

/// Gain form: d = y − Hm̂, S = HĈHᵀ + Γ, K = ĈHᵀS⁻¹, m = m̂ + Kd, C = (I − KH)Ĉ.
pub fn kf_update_gain(mhat: &Vector, chat: &Matrix, h: &Matrix, gamma: &Matrix, y: &Vector) -> Result<GainUpdate> {
    check_update(mhat, chat, h, gamma, y)?;
    let s = symmetrize(&(h * chat * h.transpose() + gamma));
    let gain = spd_solve(&s, &(h * chat))?.transpose();
    let innovation = y - h * mhat;
    let mean = mhat + &gain * &innovation;
    let n = mhat.len();
    let cov = symmetrize(&((Matrix::identity(n, n) - &gain * h) * chat));
    Ok(GainUpdate { mean, cov, gain, innovation, s })
}

/// m' = (I − KH)Ψ(m) + K y.
pub fn threedvar_step(m: &Vector, model: &ModelSpec, h: &Matrix, k: &Matrix, y: &Vector) -> Result<Vector> {
    let f = model.apply(m)?;
    let out = &f + k * (y - h * &f);
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteState { step: 0 });
    }
    Ok(out)
}

/// Ĉ = DΨ(m) C DΨ(m)ᵀ + Σ, then the gain-form analysis at m̂ = Ψ(m).
pub fn exkf_step(
    m: &Vector,
    c: &Matrix,
    model: &ModelSpec,
    h: &Matrix,
    sigma: &Matrix,
    gamma: &Matrix,
    y: &Vector,
) -> Result<(Vector, Matrix)> {
    let mhat = model.apply(m)?;
    let jac = model.jacobian(m)?;
    let chat = symmetrize(&(&jac * c * jac.transpose() + sigma));
    let up = kf_update_gain(&mhat, &chat, h, gamma, y)?;
    if up.mean.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteState { step: 0 });
    }
    Ok((up.mean, up.cov))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub members: Vec<Vector>,
}

impl Ensemble {
    pub fn new(members: Vec<Vector>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InvalidParameter("ensemble needs at least two members".into()));
        }
        Ok(Ensemble { members })
    }

    pub fn draw(g: &GaussianState, n: usize, rng: &mut RngStream) -> Result<Self> {
        let l = cholesky_factor(&g.cov)?;
        Ensemble::new((0..n).map(|_| sample_with_factor(&g.mean, &l, rng)).collect())
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn mean(&self) -> Vector {
        let mut m = Vector::zeros(self.members[0].len());
        for v in &self.members {
            m += v;
        }
        m / self.size() as f64
    }

    /// Sample covariance with divisor N − 1.
    pub fn covariance(&self) -> Matrix {
        let m = self.mean();
        let n = m.len();
        let mut c = Matrix::zeros(n, n);
        for v in &self.members {
            let d = v - &m;
            c += &d * d.transpose();
        }
        symmetrize(&(c / (self.size() - 1) as f64))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleOptions {
    /// Add model noise to each member in the forecast.
    pub model_noise: bool,
    /// Use the sample covariance of the observation perturbations instead of Γ in S.
    pub sample_obs_cov: bool,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions { model_noise: true, sample_obs_cov: false }
    }
}

fn noise_factor(sigma: &Matrix) -> Result<Option<Matrix>> {
    if sigma.iter().all(|x| *x == 0.0) {
        Ok(None)
    } else {
        Ok(Some(cholesky_factor(sigma)?))
    }
}

fn forecast_members(
    ens: &Ensemble,
    model: &ModelSpec,
    sigma: &Matrix,
    with_noise: bool,
    rng: &mut RngStream,
) -> Result<Vec<Vector>> {
    let factor = if with_noise { noise_factor(sigma)? } else { None };
    let zero = Vector::zeros(model.state_dim());
    ens.members
        .iter()
        .map(|v| {
            let mut f = model.apply(v)?;
            if let Some(l) = &factor {
                f += sample_with_factor(&zero, l, rng);
            }
            Ok(f)
        })
        .collect()
}

/// Perturbed-observation EnKF.
#[allow(clippy::too_many_arguments)]
pub fn enkf_po_step(
    ens: &Ensemble,
    model: &ModelSpec,
    h: &Matrix,
    sigma: &Matrix,
    gamma: &Matrix,
    y: &Vector,
    rng: &mut RngStream,
    opts: &EnsembleOptions,
) -> Result<Ensemble> {
    let forecast = Ensemble::new(forecast_members(ens, model, sigma, opts.model_noise, rng)?)?;
    let chat = forecast.covariance();
    let gl = cholesky_factor(gamma)?;
    let zero = Vector::zeros(y.len());
    let perturb: Vec<Vector> = (0..forecast.size()).map(|_| sample_with_factor(&zero, &gl, rng)).collect();
    let obs_cov = if opts.sample_obs_cov {
        let p = Ensemble { members: perturb.clone() };
        p.covariance()
    } else {
        gamma.clone()
    };
    let k = kalman_gain(&chat, h, &obs_cov)?;
    let members: Vec<Vector> = forecast
        .members
        .iter()
        .zip(&perturb)
        .map(|(v, eta)| v + &k * (y + eta - h * v))
        .collect();
    if members.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFiniteState { step: 0 });
    }
    Ensemble::new(members)
}

#[derive(Clone, Debug)]
pub struct EtkfOutput {
    pub ensemble: Ensemble,
    pub forecast_mean: Vector,
    pub forecast_cov: Matrix,
    pub gain: Matrix,
    pub analysis_mean: Vector,
    /// Analysis deviations X, one column per member; C = X Xᵀ.
    pub deviations: Matrix,
}

/// Ensemble transform Kalman filter.
///
/// X̂ holds scaled forecast deviations, T = [I + (HX̂)ᵀΓ⁻¹(HX̂)]⁻¹, X = X̂T^{1/2};
/// the mean is updated in gain form and members are m + X⁽ⁿ⁾√(N−1).
#[allow(clippy::too_many_arguments)]
pub fn etkf_step(
    ens: &Ensemble,
    model: &ModelSpec,
    h: &Matrix,
    sigma: &Matrix,
    gamma: &Matrix,
    y: &Vector,
    rng: &mut RngStream,
    opts: &EnsembleOptions,
) -> Result<EtkfOutput> {
    let forecast = Ensemble::new(forecast_members(ens, model, sigma, opts.model_noise, rng)?)?;
    let nmem = forecast.size();
    let scale = ((nmem - 1) as f64).sqrt();
    let mhat = forecast.mean();
    let n = mhat.len();
    let mut xhat = Matrix::zeros(n, nmem);
    for (i, v) in forecast.members.iter().enumerate() {
        xhat.set_column(i, &((v - &mhat) / scale));
    }
    let chat = symmetrize(&(&xhat * xhat.transpose()));
    // T^{1/2} = I + U(diag((1+s²)^{-1/2}) − I)Uᵀ from the thin SVD of Sᵀ, S = LᵀHX̂, Γ⁻¹ = LLᵀ
    let s = cholesky_factor(&spd_inverse(gamma)?)?.transpose() * (h * &xhat);
    let svd = s.transpose().svd(true, false);
    let u = svd.u.ok_or(Error::DegeneratePosterior)?;
    let shrink = Matrix::from_diagonal(&svd.singular_values.map(|v| 1.0 / (1.0 + v * v).sqrt() - 1.0));
    let xu = &xhat * &u;
    let x = &xhat + xu * shrink * u.transpose();
    let up = kf_update_gain(&mhat, &chat, h, gamma, y)?;
    let members: Vec<Vector> = (0..nmem).map(|i| &up.mean + x.column(i) * scale).collect();
    if members.iter().any(|v| v.iter().any(|z| !z.is_finite())) {
        return Err(Error::NonFiniteState { step: 0 });
    }
    Ok(EtkfOutput {
        ensemble: Ensemble { members },
        forecast_mean: mhat,
        forecast_cov: chat,
        gain: up.gain,
        analysis_mean: up.mean,
        deviations: x,
    })
}

/// N draws with replacement in proportion to the weights; output weights 1/N.
pub fn resample_multinomial(ws: &WeightedSamples, rng: &mut RngStream) -> WeightedSamples {
    let idx = multinomial_indices(&ws.weights, ws.len(), rng);
    WeightedSamples::uniform(idx.into_iter().map(|i| ws.points[i].clone()).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ParticleOptions {
    /// Resample only when ESS < threshold·N. `None` resamples every step.
    pub ess_threshold: Option<f64>,
}

fn finish_particles(weighted: WeightedSamples, rng: &mut RngStream, opts: &ParticleOptions) -> WeightedSamples {
    match opts.ess_threshold {
        Some(t) if weighted.effective_sample_size() >= t * weighted.len() as f64 => weighted,
        _ => resample_multinomial(&weighted, rng),
    }
}

/// Bootstrap proposal and reweighting, before resampling.
#[allow(clippy::too_many_arguments)]
pub fn sirs_analysis(
    ws: &WeightedSamples,
    model: &ModelSpec,
    h: &Matrix,
    sigma: &Matrix,
    gamma: &Matrix,
    y: &Vector,
    rng: &mut RngStream,
) -> Result<WeightedSamples> {
    let factor = noise_factor(sigma)?;
    let gamma_inv = spd_inverse(gamma)?;
    let zero = Vector::zeros(model.state_dim());
    let mut points = Vec::with_capacity(ws.len());
    let mut log_w = Vec::with_capacity(ws.len());
    for (v, w) in ws.points.iter().zip(&ws.weights) {
        let mut f = model.apply(v)?;
        if let Some(l) = &factor {
            f += sample_with_factor(&zero, l, rng);
        }
        log_w.push(w.ln() - 0.5 * weighted_sq_norm(&(y - h * &f), &gamma_inv));
        points.push(f);
    }
    WeightedSamples::from_log_weights(points, &log_w)
}

/// Bootstrap particle filter step (sequential importance resampling).
#[allow(clippy::too_many_arguments)]
pub fn sirs_step(
    ws: &WeightedSamples,
    model: &ModelSpec,
    h: &Matrix,
    sigma: &Matrix,
    gamma: &Matrix,
    y: &Vector,
    rng: &mut RngStream,
    opts: &ParticleOptions,
) -> Result<WeightedSamples> {
    let weighted = sirs_analysis(ws, model, h, sigma, gamma, y, rng)?;
    Ok(finish_particles(weighted, rng, opts))
}

/// Optimal proposal N(m', Σ') for one observation y.
///
/// Σ' = (Σ⁻¹ + HᵀΓ⁻¹H)⁻¹, m' = Σ'(Σ⁻¹Ψ(v) + HᵀΓ⁻¹y); weights N(y; HΨ(v), Γ + HΣHᵀ).
#[derive(Clone, Debug)]
pub struct OptimalProposal {
    pub cov: Matrix,
    factor: Matrix,
    sigma_inv: Matrix,
    data_term: Vector,
    pred_cov_inv: Matrix,
}

impl OptimalProposal {
    pub fn new(h: &Matrix, sigma: &Matrix, gamma: &Matrix, y: &Vector) -> Result<Self> {
        let sigma_inv = spd_inverse(sigma)?;
        let ht_gi = h.transpose() * spd_inverse(gamma)?;
        let cov = spd_inverse(&(&sigma_inv + &ht_gi * h))?;
        let factor = cholesky_factor(&cov)?;
        let pred_cov_inv = spd_inverse(&(gamma + h * sigma * h.transpose()))?;
        Ok(OptimalProposal { cov, factor, sigma_inv, data_term: ht_gi * y, pred_cov_inv })
    }

    /// m' given the forecast Ψ(v).
    pub fn mean(&self, forecast: &Vector) -> Vector {
        &self.cov * (&self.sigma_inv * forecast + &self.data_term)
    }

    /// Unnormalized log-weight increment given the forecast Ψ(v).
    pub fn log_weight(&self, forecast: &Vector, h: &Matrix, y: &Vector) -> f64 {
        -0.5 * weighted_sq_norm(&(y - h * forecast), &self.pred_cov_inv)
    }
}

/// Optimal proposal and reweighting, before resampling. With Σ = 0 this is the
/// standard proposal.
#[allow(clippy::too_many_arguments)]
pub fn sirs_op_analysis(
    ws: &WeightedSamples,
    model: &ModelSpec,
    h: &Matrix,
    sigma: &Matrix,
    gamma: &Matrix,
    y: &Vector,
    rng: &mut RngStream,
) -> Result<WeightedSamples> {
    if noise_factor(sigma)?.is_none() {
        return sirs_analysis(ws, model, h, sigma, gamma, y, rng);
    }
    let op = OptimalProposal::new(h, sigma, gamma, y)?;
    let mut points = Vec::with_capacity(ws.len());
    let mut log_w = Vec::with_capacity(ws.len());
    for (v, w) in ws.points.iter().zip(&ws.weights) {
        let f = model.apply(v)?;
        points.push(sample_with_factor(&op.mean(&f), &op.factor, rng));
        log_w.push(w.ln() + op.log_weight(&f, h, y));
    }
    WeightedSamples::from_log_weights(points, &log_w)
}

#[allow(clippy::too_many_arguments)]
pub fn sirs_op_step(
    ws: &WeightedSamples,
    model: &ModelSpec,
    h: &Matrix,
    sigma: &Matrix,
    gamma: &Matrix,
    y: &Vector,
    rng: &mut RngStream,
    opts: &ParticleOptions,
) -> Result<WeightedSamples> {
    let weighted = sirs_op_analysis(ws, model, h, sigma, gamma, y, rng)?;
    Ok(finish_particles(weighted, rng, opts))
}

/// m' = QΨ(m) + P y with Q = I − P.
pub fn sync_filter_step(m: &Vector, model: &ModelSpec, p: &Matrix, y: &Vector) -> Result<Vector> {
    let n = m.len();
    if p.nrows() != n || p.ncols() != n || y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    let q = Matrix::identity(n, n) - p;
    Ok(q * model.apply(m)? + p * y)
}

#[derive(Clone, Debug, PartialEq)]
pub enum FilterKind {
    Kalman,
    ThreeDVar { chat: Matrix },
    ExKF,
    EnKF { members: usize, options: EnsembleOptions },
    Etkf { members: usize, options: EnsembleOptions },
    Sirs { particles: usize, options: ParticleOptions },
    SirsOp { particles: usize, options: ParticleOptions },
    /// Noise-free observation of P v† is assumed.
    Sync { p: Matrix },
}

impl FilterKind {
    pub fn label(&self) -> &'static str {
        match self {
            FilterKind::Kalman => "kf",
            FilterKind::ThreeDVar { .. } => "3dvar",
            FilterKind::ExKF => "exkf",
            FilterKind::EnKF { .. } => "enkf",
            FilterKind::Etkf { .. } => "etkf",
            FilterKind::Sirs { .. } => "sirs",
            FilterKind::SirsOp { .. } => "sirs_op",
            FilterKind::Sync { .. } => "sync",
        }
    }
}

/// Twin experiment: truth, data and filter initialization.
#[derive(Clone, Debug)]
pub struct TwinSetup {
    pub model: ModelSpec,
    pub obs: ObservationSpec,
    /// Model noise of the truth and of the filters; `None` for deterministic dynamics.
    pub sigma: Option<Matrix>,
    pub gamma: Matrix,
    pub truth_v0: Vector,
    pub filter_init: GaussianState,
    pub steps: usize,
    pub seed: u64,
}

impl TwinSetup {
    pub fn sigma_or_zero(&self) -> Matrix {
        let n = self.model.state_dim();
        self.sigma.clone().unwrap_or_else(|| Matrix::zeros(n, n))
    }

    /// Truth and data from the TRUTH and OBSERVATION streams.
    pub fn generate(&self) -> Result<(Trajectory, ObservationSequence)> {
        let mut truth_rng = RngStream::new(self.seed, streams::TRUTH);
        let truth = simulate(&self.model, &self.truth_v0, self.steps, self.sigma.as_ref(), &mut truth_rng)?;
        let mut obs_rng = RngStream::new(self.seed, streams::OBSERVATION);
        let data = generate_data(&truth, &self.obs, &self.gamma, &mut obs_rng)?;
        Ok((truth, data))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterRecord {
    pub j: usize,
    pub mean: Vector,
    /// Covariance (Gaussian filters) or sample covariance (ensembles, particles).
    pub cov: Option<Matrix>,
    pub truth: Vector,
    pub error: f64,
    /// Forecast ensemble, when recording was requested.
    pub forecast: Option<Vec<Vector>>,
}

#[derive(Clone, Debug)]
pub struct FilterRun {
    pub kind: FilterKind,
    pub truth: Trajectory,
    pub data: ObservationSequence,
    pub records: Vec<FilterRecord>,
    /// Step at which the estimate became non-finite.
    pub blow_up: Option<usize>,
}

impl FilterRun {
    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.error).collect()
    }
}

enum FilterState {
    Gaussian(Vector, Matrix),
    Mean(Vector),
    Ensemble(Ensemble),
    Particles(WeightedSamples),
}

pub fn run_filter(setup: &TwinSetup, kind: &FilterKind) -> Result<FilterRun> {
    run_filter_with(setup, kind, false)
}

/// Run one filter over the twin experiment; a non-finite estimate stops the run
/// and is reported in `blow_up`.
pub fn run_filter_with(setup: &TwinSetup, kind: &FilterKind, record_forecasts: bool) -> Result<FilterRun> {
    let (truth, data) = setup.generate()?;
    let h = setup.obs.matrix();
    let sigma = setup.sigma_or_zero();
    let gamma = &setup.gamma;
    let model = &setup.model;
    let mut init_rng = RngStream::new(setup.seed, streams::INIT);
    let mut rng = RngStream::new(setup.seed, streams::FILTER);

    let mut state = match kind {
        FilterKind::Kalman | FilterKind::ExKF => {
            if matches!(kind, FilterKind::Kalman) && model.linear_matrix().is_none() {
                return Err(Error::NonLinearModel);
            }
            FilterState::Gaussian(setup.filter_init.mean.clone(), setup.filter_init.cov.clone())
        }
        FilterKind::ThreeDVar { .. } | FilterKind::Sync { .. } => FilterState::Mean(setup.filter_init.mean.clone()),
        FilterKind::EnKF { members, .. } | FilterKind::Etkf { members, .. } => {
            FilterState::Ensemble(Ensemble::draw(&setup.filter_init, *members, &mut init_rng)?)
        }
        FilterKind::Sirs { particles, .. } | FilterKind::SirsOp { particles, .. } => {
            let l = cholesky_factor(&setup.filter_init.cov)?;
            let pts = (0..*particles).map(|_| sample_with_factor(&setup.filter_init.mean, &l, &mut init_rng)).collect();
            FilterState::Particles(WeightedSamples::uniform(pts))
        }
    };
    let gain_3dvar = match kind {
        FilterKind::ThreeDVar { chat } => Some(kalman_gain(chat, &h, gamma)?),
        _ => None,
    };
    let mm = model.linear_matrix();

    let summary = |state: &FilterState| -> (Vector, Option<Matrix>) {
        match state {
            FilterState::Gaussian(m, c) => (m.clone(), Some(c.clone())),
            FilterState::Mean(m) => (m.clone(), None),
            FilterState::Ensemble(e) => (e.mean(), Some(e.covariance())),
            FilterState::Particles(p) => (p.mean(), Some(p.covariance())),
        }
    };

    let mut records = Vec::with_capacity(setup.steps + 1);
    let (m0, c0) = summary(&state);
    records.push(FilterRecord { j: 0, error: (&m0 - &truth.states[0]).norm(), mean: m0, cov: c0, truth: truth.states[0].clone(), forecast: None });
    let mut blow_up = None;

    for j in 1..=setup.steps {
        let y = data.y(j);
        let mut forecast = None;
        let step: Result<FilterState> = (|| match (&state, kind) {
            (FilterState::Gaussian(m, c), FilterKind::Kalman) => {
                let (mhat, chat) = kf_predict(m, c, mm.as_ref().unwrap(), &sigma)?;
                let up = kf_update_gain(&mhat, &chat, &h, gamma, y)?;
                Ok(FilterState::Gaussian(up.mean, up.cov))
            }
            (FilterState::Gaussian(m, c), FilterKind::ExKF) => {
                let (m, c) = exkf_step(m, c, model, &h, &sigma, gamma, y)?;
                Ok(FilterState::Gaussian(m, c))
            }
            (FilterState::Mean(m), FilterKind::ThreeDVar { .. }) => {
                Ok(FilterState::Mean(threedvar_step(m, model, &h, gain_3dvar.as_ref().unwrap(), y)?))
            }
            (FilterState::Mean(m), FilterKind::Sync { p }) => {
                let exact = p * &truth.states[j];
                Ok(FilterState::Mean(sync_filter_step(m, model, p, &exact)?))
            }
            (FilterState::Ensemble(e), FilterKind::EnKF { options, .. }) => {
                if record_forecasts {
                    forecast = Some(peek_forecast(e, model, &sigma, options, &rng)?);
                }
                Ok(FilterState::Ensemble(enkf_po_step(e, model, &h, &sigma, gamma, y, &mut rng, options)?))
            }
            (FilterState::Ensemble(e), FilterKind::Etkf { options, .. }) => {
                if record_forecasts {
                    forecast = Some(peek_forecast(e, model, &sigma, options, &rng)?);
                }
                Ok(FilterState::Ensemble(etkf_step(e, model, &h, &sigma, gamma, y, &mut rng, options)?.ensemble))
            }
            (FilterState::Particles(p), FilterKind::Sirs { options, .. }) => {
                Ok(FilterState::Particles(sirs_step(p, model, &h, &sigma, gamma, y, &mut rng, options)?))
            }
            (FilterState::Particles(p), FilterKind::SirsOp { options, .. }) => {
                Ok(FilterState::Particles(sirs_op_step(p, model, &h, &sigma, gamma, y, &mut rng, options)?))
            }
            _ => unreachable!("filter state matches its kind"),
        })();
        match step {
            Ok(s) => state = s,
            Err(Error::NonFiniteState { .. }) | Err(Error::NotPositiveSemiDefinite { .. }) | Err(Error::ZeroWeightSum) => {
                blow_up = Some(j);
                break;
            }
            Err(e) => return Err(e),
        }
        let (mean, cov) = summary(&state);
        if mean.iter().any(|x| !x.is_finite()) {
            blow_up = Some(j);
            break;
        }
        let error = (&mean - &truth.states[j]).norm();
        records.push(FilterRecord { j, mean, cov, truth: truth.states[j].clone(), error, forecast });
    }
    Ok(FilterRun { kind: kind.clone(), truth, data, records, blow_up })
}

/// The forecast ensemble the next analysis will see, computed on a copy of the stream.
fn peek_forecast(
    e: &Ensemble,
    model: &ModelSpec,
    sigma: &Matrix,
    options: &EnsembleOptions,
    rng: &RngStream,
) -> Result<Vec<Vector>> {
    let mut copy = rng.clone();
    forecast_members(e, model, sigma, options.model_noise, &mut copy)
}
