//! Smoothing posteriors: negative log-densities for stochastic and deterministic
//! dynamics, the noise/signal reparametrization, 1-D grid posteriors, and the
//! linear-Gaussian Kalman smoother.

use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, weighted_sq_norm, Matrix, Vector};
use crate::models::{ModelSpec, ObservationSequence, ObservationSpec};
use crate::prob::GriddedDensity1D;
use crate::types::{GaussianState, Trajectory};

/// Concatenation (v_0, ξ_0, …, ξ_{J−1}).
pub type NoiseVector = Vector;

#[derive(Clone, Debug, PartialEq)]
pub enum Dynamics {
    Stochastic { sigma: Matrix },
    Deterministic,
}

#[derive(Clone, Debug)]
pub struct SmoothingProblem {
    model: ModelSpec,
    obs: ObservationSpec,
    dynamics: Dynamics,
    gamma: Matrix,
    prior: GaussianState,
    data: Vec<Vector>,
    h: Matrix,
    gamma_inv: Matrix,
    c0_inv: Matrix,
    sigma_inv: Option<Matrix>,
}

impl SmoothingProblem {
    /// `data[j - 1]` is y_j.
    pub fn new(
        model: ModelSpec,
        obs: ObservationSpec,
        dynamics: Dynamics,
        gamma: Matrix,
        prior: GaussianState,
        data: Vec<Vector>,
    ) -> Result<Self> {
        model.validate()?;
        let n = model.state_dim();
        if obs.state_dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: obs.state_dim() });
        }
        if prior.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: prior.dim() });
        }
        let m = obs.obs_dim();
        if let Some(y) = data.iter().find(|y| y.len() != m) {
            return Err(Error::DimensionMismatch { expected: m, got: y.len() });
        }
        let gamma_inv = spd_inverse(&gamma)?;
        let c0_inv = spd_inverse(&prior.cov)?;
        let sigma_inv = match &dynamics {
            Dynamics::Stochastic { sigma } => Some(spd_inverse(sigma)?),
            Dynamics::Deterministic => None,
        };
        let h = obs.matrix();
        Ok(SmoothingProblem { model, obs, dynamics, gamma, prior, data, h, gamma_inv, c0_inv, sigma_inv })
    }

    pub fn from_sequence(
        model: ModelSpec,
        dynamics: Dynamics,
        prior: GaussianState,
        seq: &ObservationSequence,
    ) -> Result<Self> {
        Self::new(model, seq.operator.clone(), dynamics, seq.gamma.clone(), prior, seq.observations.clone())
    }

    /// Same problem with other data.
    pub fn with_data(&self, data: Vec<Vector>) -> Result<Self> {
        let mut p = self.clone();
        if let Some(y) = data.iter().find(|y| y.len() != self.obs.obs_dim()) {
            return Err(Error::DimensionMismatch { expected: self.obs.obs_dim(), got: y.len() });
        }
        p.data = data;
        Ok(p)
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn obs(&self) -> &ObservationSpec {
        &self.obs
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn gamma(&self) -> &Matrix {
        &self.gamma
    }

    pub fn gamma_inv(&self) -> &Matrix {
        &self.gamma_inv
    }

    pub fn prior(&self) -> &GaussianState {
        &self.prior
    }

    pub fn c0_inv(&self) -> &Matrix {
        &self.c0_inv
    }

    pub fn data(&self) -> &[Vector] {
        &self.data
    }

    /// J, the number of observations.
    pub fn steps(&self) -> usize {
        self.data.len()
    }

    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn sigma(&self) -> Result<&Matrix> {
        match &self.dynamics {
            Dynamics::Stochastic { sigma } => Ok(sigma),
            Dynamics::Deterministic => Err(Error::ZeroModelNoise),
        }
    }

    pub fn sigma_inv(&self) -> Result<&Matrix> {
        self.sigma_inv.as_ref().ok_or(Error::ZeroModelNoise)
    }

    fn check_path(&self, v: &Trajectory) -> Result<()> {
        if v.states.len() != self.steps() + 1 {
            return Err(Error::DimensionMismatch { expected: self.steps() + 1, got: v.states.len() });
        }
        if v.dim() != self.state_dim() {
            return Err(Error::DimensionMismatch { expected: self.state_dim(), got: v.dim() });
        }
        Ok(())
    }

    fn prior_term(&self, v0: &Vector) -> f64 {
        0.5 * weighted_sq_norm(&(v0 - &self.prior.mean), &self.c0_inv)
    }

    fn obs_term(&self, j: usize, v: &Vector) -> f64 {
        0.5 * weighted_sq_norm(&(&self.data[j - 1] - &self.h * v), &self.gamma_inv)
    }
}

/// Φ(v; y) = Σ_j ½|y_{j+1} − h(v_{j+1})|²_Γ.
pub fn misfit_phi(p: &SmoothingProblem, v: &Trajectory) -> Result<f64> {
    p.check_path(v)?;
    Ok((1..=p.steps()).map(|j| p.obs_term(j, &v.states[j])).sum())
}

/// J(v) = ½|v_0 − m_0|²_{C_0} + Σ_j ½|v_{j+1} − Ψ(v_j)|²_Σ.
pub fn background_j(p: &SmoothingProblem, v: &Trajectory) -> Result<f64> {
    let sigma_inv = p.sigma_inv()?;
    p.check_path(v)?;
    let mut total = p.prior_term(&v.states[0]);
    for j in 0..p.steps() {
        let d = &v.states[j + 1] - p.model.apply(&v.states[j])?;
        total += 0.5 * weighted_sq_norm(&d, sigma_inv);
    }
    Ok(total)
}

/// I(v; y) = J(v) + Φ(v; y).
pub fn neg_log_posterior(p: &SmoothingProblem, v: &Trajectory) -> Result<f64> {
    Ok(background_j(p, v)? + misfit_phi(p, v)?)
}

/// I_det(v_0; y) = ½|v_0 − m_0|²_{C_0} + Σ_j ½|y_{j+1} − h(Ψ^{(j+1)}(v_0))|²_Γ.
pub fn neg_log_posterior_det(p: &SmoothingProblem, v0: &Vector) -> Result<f64> {
    if v0.len() != p.state_dim() {
        return Err(Error::DimensionMismatch { expected: p.state_dim(), got: v0.len() });
    }
    let mut total = p.prior_term(v0);
    let mut v = v0.clone();
    for j in 1..=p.steps() {
        v = p.model.apply(&v)?;
        total += p.obs_term(j, &v);
        if !total.is_finite() {
            return Err(Error::NonFiniteState { step: j });
        }
    }
    Ok(total)
}

/// G: (v_0, ξ) ↦ v with v_{j+1} = Ψ(v_j) + ξ_j.
pub fn noise_to_signal(p: &SmoothingProblem, xi: &NoiseVector) -> Result<Trajectory> {
    let n = p.state_dim();
    let len = (p.steps() + 1) * n;
    if xi.len() != len {
        return Err(Error::DimensionMismatch { expected: len, got: xi.len() });
    }
    let mut states = Vec::with_capacity(p.steps() + 1);
    states.push(xi.rows(0, n).into_owned());
    for j in 0..p.steps() {
        let next = p.model.apply(&states[j])? + xi.rows((j + 1) * n, n);
        states.push(next);
    }
    Ok(Trajectory { states })
}

/// Inverse of [`noise_to_signal`]: ξ_j = v_{j+1} − Ψ(v_j).
pub fn signal_to_noise(p: &SmoothingProblem, v: &Trajectory) -> Result<NoiseVector> {
    p.check_path(v)?;
    let n = p.state_dim();
    let mut xi = Vector::zeros((p.steps() + 1) * n);
    xi.rows_mut(0, n).copy_from(&v.states[0]);
    for j in 0..p.steps() {
        let d = &v.states[j + 1] - p.model.apply(&v.states[j])?;
        xi.rows_mut((j + 1) * n, n).copy_from(&d);
    }
    Ok(xi)
}

/// J_r(ξ) = ½|v_0 − m_0|²_{C_0} + Σ ½|ξ_j|²_Σ.
pub fn background_j_noise(p: &SmoothingProblem, xi: &NoiseVector) -> Result<f64> {
    let sigma_inv = p.sigma_inv()?;
    let n = p.state_dim();
    let len = (p.steps() + 1) * n;
    if xi.len() != len {
        return Err(Error::DimensionMismatch { expected: len, got: xi.len() });
    }
    let mut total = p.prior_term(&xi.rows(0, n).into_owned());
    for j in 0..p.steps() {
        total += 0.5 * weighted_sq_norm(&xi.rows((j + 1) * n, n).into_owned(), sigma_inv);
    }
    Ok(total)
}

/// Φ_r(ξ; y) = Φ(G(ξ); y).
pub fn misfit_phi_noise(p: &SmoothingProblem, xi: &NoiseVector) -> Result<f64> {
    misfit_phi(p, &noise_to_signal(p, xi)?)
}

/// I_r(ξ; y) = J_r(ξ) + Φ_r(ξ; y).
pub fn neg_log_posterior_noise(p: &SmoothingProblem, xi: &NoiseVector) -> Result<f64> {
    Ok(background_j_noise(p, xi)? + misfit_phi_noise(p, xi)?)
}

/// Posterior density of v_0 on a grid, ∝ exp(−I_det), for scalar deterministic problems.
///
/// Nodes where I_det is not finite get density zero.
pub fn grid_posterior_1d(p: &SmoothingProblem, grid: &[f64]) -> Result<GriddedDensity1D> {
    if p.state_dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: p.state_dim() });
    }
    if p.dynamics != Dynamics::Deterministic {
        return Err(Error::StochasticModel);
    }
    let idet: Vec<f64> = grid
        .iter()
        .map(|&x| neg_log_posterior_det(p, &Vector::from_element(1, x)).unwrap_or(f64::INFINITY))
        .collect();
    let min = idet.iter().cloned().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::DegeneratePosterior);
    }
    let values: Vec<f64> = idet.iter().map(|i| (min - i).exp()).collect();
    GriddedDensity1D::new(grid.to_vec(), values)?.normalized()
}

/// Symmetric block-tridiagonal matrix; `upper[b]` is the (b, b+1) block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTridiagonal {
    pub diag: Vec<Matrix>,
    pub upper: Vec<Matrix>,
}

impl BlockTridiagonal {
    pub fn blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn block_dim(&self) -> usize {
        self.diag[0].nrows()
    }

    pub fn to_dense(&self) -> Matrix {
        let n = self.block_dim();
        let nb = self.blocks();
        let mut out = Matrix::zeros(n * nb, n * nb);
        for (b, d) in self.diag.iter().enumerate() {
            out.view_mut((b * n, b * n), (n, n)).copy_from(d);
        }
        for (b, u) in self.upper.iter().enumerate() {
            out.view_mut((b * n, (b + 1) * n), (n, n)).copy_from(u);
            out.view_mut(((b + 1) * n, b * n), (n, n)).copy_from(&u.transpose());
        }
        out
    }

    /// Forward elimination; returns the pivot blocks D'_b.
    fn eliminate(&self) -> Result<Vec<Matrix>> {
        let mut piv: Vec<Matrix> = Vec::with_capacity(self.blocks());
        piv.push(self.diag[0].clone());
        for b in 1..self.blocks() {
            let prev_inv = piv[b - 1].clone().try_inverse().ok_or(Error::SingularPrecision(b - 1))?;
            let lower = self.upper[b - 1].transpose();
            piv.push(&self.diag[b] - &lower * prev_inv * &self.upper[b - 1]);
        }
        Ok(piv)
    }

    /// Solve L x = r by block LU.
    pub fn solve(&self, r: &[Vector]) -> Result<Vec<Vector>> {
        let nb = self.blocks();
        if r.len() != nb {
            return Err(Error::DimensionMismatch { expected: nb, got: r.len() });
        }
        let mut piv: Vec<Matrix> = Vec::with_capacity(nb);
        let mut piv_inv: Vec<Matrix> = Vec::with_capacity(nb);
        let mut rr: Vec<Vector> = Vec::with_capacity(nb);
        for b in 0..nb {
            let (d, rb) = if b == 0 {
                (self.diag[0].clone(), r[0].clone())
            } else {
                let lower = self.upper[b - 1].transpose();
                let t = &lower * &piv_inv[b - 1];
                (&self.diag[b] - &t * &self.upper[b - 1], &r[b] - &t * &rr[b - 1])
            };
            let inv = d.clone().try_inverse().ok_or(Error::SingularPrecision(b))?;
            piv.push(d);
            piv_inv.push(inv);
            rr.push(rb);
        }
        let mut x = vec![Vector::zeros(0); nb];
        x[nb - 1] = &piv_inv[nb - 1] * &rr[nb - 1];
        for b in (0..nb - 1).rev() {
            x[b] = &piv_inv[b] * (&rr[b] - &self.upper[b] * &x[b + 1]);
        }
        Ok(x)
    }

    /// The last diagonal block of L⁻¹, i.e. the inverse of the final Schur complement.
    pub fn last_block_of_inverse(&self) -> Result<Matrix> {
        let piv = self.eliminate()?;
        let last = piv.len() - 1;
        piv[last].clone().try_inverse().ok_or(Error::SingularPrecision(last))
    }
}

#[derive(Clone, Debug)]
pub struct SmootherResult {
    pub mean: Trajectory,
    pub precision: BlockTridiagonal,
    pub rhs: Vec<Vector>,
}

impl SmootherResult {
    /// Gaussian marginal of v_J.
    pub fn final_marginal(&self) -> Result<GaussianState> {
        let cov = self.precision.last_block_of_inverse()?;
        Ok(GaussianState { mean: self.mean.states.last().unwrap().clone(), cov: crate::linalg::symmetrize(&cov) })
    }
}

/// Linear-Gaussian smoother: assemble the block-tridiagonal precision L and
/// right-hand side r, then solve L m = r.
///
/// Block b corresponds to v_b:
/// L_00 = C_0⁻¹ + MᵀΣ⁻¹M, L_bb = HᵀΓ⁻¹H + MᵀΣ⁻¹M + Σ⁻¹ (0 < b < J),
/// L_JJ = HᵀΓ⁻¹H + Σ⁻¹, L_{b,b+1} = −MᵀΣ⁻¹; r_0 = C_0⁻¹m_0, r_b = HᵀΓ⁻¹y_b.
pub fn kalman_smoother(p: &SmoothingProblem) -> Result<SmootherResult> {
    let m = p.model.linear_matrix().ok_or(Error::NonLinearModel)?;
    let sigma_inv = p.sigma_inv()?;
    let jj = p.steps();
    let h = &p.h;
    let ht_gi = h.transpose() * &p.gamma_inv;
    let obs_block = &ht_gi * h;
    let mt_si = m.transpose() * sigma_inv;
    let mt_si_m = &mt_si * &m;
    let mut diag = Vec::with_capacity(jj + 1);
    let mut upper = Vec::with_capacity(jj);
    let mut rhs = Vec::with_capacity(jj + 1);
    for b in 0..=jj {
        let mut d = if b == 0 { p.c0_inv.clone() } else { &obs_block + sigma_inv };
        if b < jj {
            d += &mt_si_m;
            upper.push(-&mt_si);
        }
        diag.push(d);
        rhs.push(if b == 0 { &p.c0_inv * &p.prior.mean } else { &ht_gi * &p.data[b - 1] });
    }
    let precision = BlockTridiagonal { diag, upper };
    let states = precision.solve(&rhs)?;
    Ok(SmootherResult { mean: Trajectory { states }, precision, rhs })
}

/// Deterministic linear smoother on v_0:
/// L_det = C_0⁻¹ + Σ_j (Mᵀ)^{j+1}HᵀΓ⁻¹H M^{j+1},
/// L_det m_det = C_0⁻¹m_0 + Σ_j (Mᵀ)^{j+1}HᵀΓ⁻¹y_{j+1}.
pub fn kalman_smoother_det(p: &SmoothingProblem) -> Result<GaussianState> {
    let m = p.model.linear_matrix().ok_or(Error::NonLinearModel)?;
    if p.dynamics != Dynamics::Deterministic {
        return Err(Error::StochasticModel);
    }
    let n = p.state_dim();
    let mut prec = p.c0_inv.clone();
    let mut rhs = &p.c0_inv * &p.prior.mean;
    let mut power = Matrix::identity(n, n);
    for y in &p.data {
        power = &m * power;
        let g = &p.h * &power;
        let gt_gi = g.transpose() * &p.gamma_inv;
        prec += &gt_gi * &g;
        rhs += &gt_gi * y;
    }
    let cov = spd_inverse(&prec)?;
    let mean = &cov * rhs;
    Ok(GaussianState { mean, cov })
}
