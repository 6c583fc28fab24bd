//! Forward maps, observation operators, and twin-experiment data generation.

use crate::error::{Error, Result};
use crate::linalg::{cholesky_factor, Matrix, Vector};
use crate::rng::RngStream;
use crate::types::{sample_with_factor, Trajectory};

/// The three 2×2 matrices of the two-dimensional linear example.
#[derive(Clone, Debug, PartialEq)]
pub enum Linear2D {
    /// diag(λ1, λ2)
    Diagonal { l1: f64, l2: f64 },
    /// [[λ, α], [0, λ]]
    Jordan { lambda: f64, alpha: f64 },
    /// [[0, 1], [−1, 0]], rotation by π/2
    Rotation,
}

impl Linear2D {
    pub fn matrix(&self) -> Matrix {
        match *self {
            Linear2D::Diagonal { l1, l2 } => Matrix::from_row_slice(2, 2, &[l1, 0.0, 0.0, l2]),
            Linear2D::Jordan { lambda, alpha } => Matrix::from_row_slice(2, 2, &[lambda, alpha, 0.0, lambda]),
            Linear2D::Rotation => Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    LinearScalar { lambda: f64 },
    Linear2D(Linear2D),
    /// General linear map v ↦ M v.
    Linear { m: Matrix },
    SinMap { alpha: f64 },
    Logistic { r: f64 },
    /// Lorenz '63 in shifted coordinates.
    Lorenz63 { a: f64, b: f64, r: f64, tau: f64, substeps: usize },
    Lorenz96 { k: usize, f: f64, tau: f64, substeps: usize },
}

impl ModelSpec {
    pub fn lorenz63_classical(tau: f64) -> Self {
        ModelSpec::Lorenz63 { a: 10.0, b: 8.0 / 3.0, r: 28.0, tau, substeps: 20 }
    }

    pub fn lorenz96_default(tau: f64) -> Self {
        ModelSpec::Lorenz96 { k: 40, f: 8.0, tau, substeps: 20 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::InvalidParameter(s.to_string()));
        match self {
            ModelSpec::Logistic { r } if !(0.0..=4.0).contains(r) => bad("logistic r must lie in [0, 4]"),
            ModelSpec::Linear { m } if m.nrows() != m.ncols() || m.nrows() == 0 => bad("linear map must be square"),
            ModelSpec::Lorenz96 { k, .. } if *k < 4 => bad("Lorenz '96 needs K >= 4"),
            ModelSpec::Lorenz63 { tau, substeps, .. } | ModelSpec::Lorenz96 { tau, substeps, .. }
                if !(*tau > 0.0) || *substeps == 0 =>
            {
                bad("ODE models need tau > 0 and substeps >= 1")
            }
            _ => Ok(()),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            ModelSpec::LinearScalar { .. } | ModelSpec::SinMap { .. } | ModelSpec::Logistic { .. } => 1,
            ModelSpec::Linear2D(_) => 2,
            ModelSpec::Linear { m } => m.nrows(),
            ModelSpec::Lorenz63 { .. } => 3,
            ModelSpec::Lorenz96 { k, .. } => *k,
        }
    }

    pub fn is_ode(&self) -> bool {
        matches!(self, ModelSpec::Lorenz63 { .. } | ModelSpec::Lorenz96 { .. })
    }

    /// The matrix M when Ψ(v) = M v.
    pub fn linear_matrix(&self) -> Option<Matrix> {
        match self {
            ModelSpec::LinearScalar { lambda } => Some(Matrix::from_element(1, 1, *lambda)),
            ModelSpec::Linear2D(a) => Some(a.matrix()),
            ModelSpec::Linear { m } => Some(m.clone()),
            _ => None,
        }
    }

    fn check_dim(&self, v: &Vector) -> Result<()> {
        let n = self.state_dim();
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: v.len() });
        }
        Ok(())
    }

    /// Ψ(v). ODE kinds return the RK4 solution operator over τ.
    pub fn apply(&self, v: &Vector) -> Result<Vector> {
        self.check_dim(v)?;
        Ok(match self {
            ModelSpec::LinearScalar { lambda } => v * *lambda,
            ModelSpec::Linear2D(a) => a.matrix() * v,
            ModelSpec::Linear { m } => m * v,
            ModelSpec::SinMap { alpha } => v.map(|x| alpha * x.sin()),
            ModelSpec::Logistic { r } => v.map(|x| r * x * (1.0 - x)),
            ModelSpec::Lorenz63 { tau, .. } | ModelSpec::Lorenz96 { tau, .. } => {
                return self.integrate_rk4(v, *tau);
            }
        })
    }

    /// Right-hand side f(v) of the ODE kinds.
    pub fn vector_field(&self, v: &Vector) -> Result<Vector> {
        self.check_dim(v)?;
        match *self {
            ModelSpec::Lorenz63 { a, b, r, .. } => Ok(Vector::from_vec(vec![
                a * (v[1] - v[0]),
                -a * v[0] - v[1] - v[0] * v[2],
                v[0] * v[1] - b * v[2] - b * (r + a),
            ])),
            ModelSpec::Lorenz96 { k, f, .. } => Ok(Vector::from_fn(k, |i, _| {
                let m1 = v[(i + k - 1) % k];
                let m2 = v[(i + k - 2) % k];
                let p1 = v[(i + 1) % k];
                m1 * (p1 - m2) - v[i] + f
            })),
            _ => Err(Error::InvalidParameter("vector field requested for a discrete map".into())),
        }
    }

    /// Classical RK4 over duration t with the model's substep count.
    pub fn integrate_rk4(&self, v: &Vector, t: f64) -> Result<Vector> {
        let substeps = match self {
            ModelSpec::Lorenz63 { substeps, .. } | ModelSpec::Lorenz96 { substeps, .. } => *substeps,
            _ => return Err(Error::InvalidParameter("RK4 requested for a discrete map".into())),
        };
        self.check_dim(v)?;
        if t < 0.0 {
            return Err(Error::InvalidParameter("negative integration time".into()));
        }
        if t == 0.0 {
            return Ok(v.clone());
        }
        let h = t / substeps as f64;
        let mut x = v.clone();
        for s in 0..substeps {
            let k1 = self.vector_field(&x)?;
            let k2 = self.vector_field(&(&x + &k1 * (0.5 * h)))?;
            let k3 = self.vector_field(&(&x + &k2 * (0.5 * h)))?;
            let k4 = self.vector_field(&(&x + &k3 * h))?;
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            if x.iter().any(|z| !z.is_finite()) {
                return Err(Error::NonFiniteState { step: s });
            }
        }
        Ok(x)
    }

    /// DΨ(v). Analytic for maps, central differences of the solution operator for ODEs.
    pub fn jacobian(&self, v: &Vector) -> Result<Matrix> {
        self.check_dim(v)?;
        Ok(match self {
            ModelSpec::SinMap { alpha } => Matrix::from_diagonal(&v.map(|x| alpha * x.cos())),
            ModelSpec::Logistic { r } => Matrix::from_diagonal(&v.map(|x| r * (1.0 - 2.0 * x))),
            ModelSpec::Lorenz63 { .. } | ModelSpec::Lorenz96 { .. } => {
                let n = v.len();
                let mut jac = Matrix::zeros(n, n);
                for i in 0..n {
                    let h = 1e-6 * (1.0 + v[i].abs());
                    let mut up = v.clone();
                    let mut dn = v.clone();
                    up[i] += h;
                    dn[i] -= h;
                    let col = (self.apply(&up)? - self.apply(&dn)?) / (2.0 * h);
                    jac.set_column(i, &col);
                }
                jac
            }
            _ => self.linear_matrix().expect("linear kinds"),
        })
    }

    /// Ψ applied k times.
    pub fn iterate(&self, v: &Vector, k: usize) -> Result<Vector> {
        let mut x = v.clone();
        for step in 0..k {
            x = self.apply(&x)?;
            if x.iter().any(|z| !z.is_finite()) {
                return Err(Error::NonFiniteState { step: step + 1 });
            }
        }
        Ok(x)
    }
}

/// Ψ(v) for the given model.
pub fn apply_map(spec: &ModelSpec, v: &Vector) -> Result<Vector> {
    spec.apply(v)
}

pub fn vector_field(spec: &ModelSpec, v: &Vector) -> Result<Vector> {
    spec.vector_field(v)
}

pub fn integrate_rk4(spec: &ModelSpec, v: &Vector, t: f64) -> Result<Vector> {
    spec.integrate_rk4(v, t)
}

/// v_{j+1} = Ψ(v_j) + ξ_j, ξ_j ~ N(0, Σ). `sigma = None` gives deterministic dynamics.
pub fn simulate(
    spec: &ModelSpec,
    v0: &Vector,
    steps: usize,
    sigma: Option<&Matrix>,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    spec.validate()?;
    let factor = match sigma {
        Some(s) if s.iter().any(|x| *x != 0.0) => Some(cholesky_factor(s)?),
        _ => None,
    };
    let zero = Vector::zeros(spec.state_dim());
    let mut states = Vec::with_capacity(steps + 1);
    states.push(v0.clone());
    for j in 0..steps {
        let mut next = spec.apply(&states[j]).map_err(|e| match e {
            Error::NonFiniteState { .. } => Error::NonFiniteState { step: j + 1 },
            other => other,
        })?;
        if let Some(l) = &factor {
            next += sample_with_factor(&zero, l, rng);
        }
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteState { step: j + 1 });
        }
        states.push(next);
    }
    Ok(Trajectory { states })
}

/// First index at which a deterministic logistic orbit leaves [0, 1].
pub fn logistic_escape(spec: &ModelSpec, traj: &Trajectory) -> Option<usize> {
    match spec {
        ModelSpec::Logistic { r } if *r <= 4.0 => traj
            .states
            .iter()
            .position(|s| !(0.0..=1.0).contains(&s[0])),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ObservationSpec {
    Identity { dim: usize },
    FirstComponent { dim: usize },
    LinearMatrix(Matrix),
    /// Observe the listed coordinates of a `dim`-dimensional state.
    Projection { dim: usize, indices: Vec<usize> },
}

impl ObservationSpec {
    pub fn matrix(&self) -> Matrix {
        match self {
            ObservationSpec::Identity { dim } => Matrix::identity(*dim, *dim),
            ObservationSpec::FirstComponent { dim } => {
                let mut h = Matrix::zeros(1, *dim);
                h[(0, 0)] = 1.0;
                h
            }
            ObservationSpec::LinearMatrix(h) => h.clone(),
            ObservationSpec::Projection { dim, indices } => {
                let mut h = Matrix::zeros(indices.len(), *dim);
                for (row, &i) in indices.iter().enumerate() {
                    h[(row, i)] = 1.0;
                }
                h
            }
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            ObservationSpec::Identity { dim } => *dim,
            ObservationSpec::FirstComponent { .. } => 1,
            ObservationSpec::LinearMatrix(h) => h.nrows(),
            ObservationSpec::Projection { indices, .. } => indices.len(),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            ObservationSpec::Identity { dim }
            | ObservationSpec::FirstComponent { dim }
            | ObservationSpec::Projection { dim, .. } => *dim,
            ObservationSpec::LinearMatrix(h) => h.ncols(),
        }
    }

    pub fn apply(&self, v: &Vector) -> Result<Vector> {
        if v.len() != self.state_dim() {
            return Err(Error::DimensionMismatch { expected: self.state_dim(), got: v.len() });
        }
        Ok(self.matrix() * v)
    }
}

/// y_1..y_J together with Γ and the observation operator.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSequence {
    /// `observations[j - 1]` is y_j.
    pub observations: Vec<Vector>,
    pub gamma: Matrix,
    pub operator: ObservationSpec,
}

impl ObservationSequence {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// y_j for j ≥ 1.
    pub fn y(&self, j: usize) -> &Vector {
        &self.observations[j - 1]
    }
}

/// y_j = h(v_j) + η_j for j = 1..J.
pub fn generate_data(
    truth: &Trajectory,
    obs: &ObservationSpec,
    gamma: &Matrix,
    rng: &mut RngStream,
) -> Result<ObservationSequence> {
    let m = obs.obs_dim();
    if gamma.nrows() != m || gamma.ncols() != m {
        return Err(Error::DimensionMismatch { expected: m, got: gamma.nrows() });
    }
    let l = cholesky_factor(gamma)?;
    let zero = Vector::zeros(m);
    let mut observations = Vec::with_capacity(truth.steps());
    for v in truth.states.iter().skip(1) {
        observations.push(obs.apply(v)? + sample_with_factor(&zero, &l, rng));
    }
    Ok(ObservationSequence { observations, gamma: gamma.clone(), operator: obs.clone() })
}

/// Closed-form logistic orbit at r = 2: ½ − ½(1 − 2v₀)^{2^j}.
pub fn logistic_r2_exact(v0: f64, j: u32) -> f64 {
    0.5 - 0.5 * (1.0 - 2.0 * v0).powf(2f64.powi(j as i32))
}

/// Closed-form logistic orbit at r = 4 for v₀ = sin²(πθ), θ = p/q:
/// v_j = sin²(π z_j) with z_{j+1} = 2 z_j mod 1, computed exactly on the rationals.
pub fn logistic_r4_exact(p: u64, q: u64, j: u32) -> f64 {
    let mut num = p % q;
    for _ in 0..j {
        num = (2 * num) % q;
    }
    let s = (std::f64::consts::PI * num as f64 / q as f64).sin();
    s * s
}

/// Arcsine density 1/(π√(x(1−x))), the invariant density of the r = 4 logistic map.
pub fn logistic_invariant_density(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    1.0 / (std::f64::consts::PI * (x * (1.0 - x)).sqrt())
}

/// Constants (α, β) with ⟨f(v), v⟩ ≤ α − β|v|² for the shifted Lorenz '63 field.
///
/// ⟨f, v⟩ = −a v1² − v2² − b v3² − b(r+a) v3 and −b v3² − b(r+a) v3 ≤ −(b/2) v3² + b(r+a)²/2.
pub fn lorenz63_dissipativity(a: f64, b: f64, r: f64) -> (f64, f64) {
    (0.5 * b * (r + a).powi(2), a.min(1.0).min(0.5 * b))
}
