//! Shared value types.

use crate::error::{Error, Result};
use crate::linalg::{cholesky_factor, is_symmetric, symmetrize, Matrix, Vector};
use crate::rng::RngStream;

pub type StateVector = Vector;

/// N(mean, cov).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianState {
    pub mean: Vector,
    pub cov: Matrix,
}

impl GaussianState {
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), got: cov.nrows() });
        }
        if !is_symmetric(&cov, 1e-12) {
            return Err(Error::InvalidParameter("covariance is not symmetric".into()));
        }
        Ok(GaussianState { mean, cov })
    }

    pub fn scalar(mean: f64, var: f64) -> Self {
        GaussianState {
            mean: Vector::from_element(1, mean),
            cov: Matrix::from_element(1, 1, var),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, rng: &mut RngStream) -> Result<Vector> {
        sample_gaussian(self, rng)
    }
}

/// mean + L z with z standard normal and L the Cholesky factor of the covariance.
pub fn sample_gaussian(g: &GaussianState, rng: &mut RngStream) -> Result<Vector> {
    let l = cholesky_factor(&g.cov)?;
    Ok(sample_with_factor(&g.mean, &l, rng))
}

/// Draw using a precomputed factor; the normal draws are consumed even when L = 0.
pub fn sample_with_factor(mean: &Vector, l: &Matrix, rng: &mut RngStream) -> Vector {
    let z = rng.normal_vector(mean.len());
    mean + l * z
}

/// Signal path v_0..v_J.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vector>,
}

impl Trajectory {
    pub fn new(states: Vec<Vector>) -> Result<Self> {
        if let Some(first) = states.first() {
            let n = first.len();
            if let Some(bad) = states.iter().find(|s| s.len() != n) {
                return Err(Error::DimensionMismatch { expected: n, got: bad.len() });
            }
        }
        Ok(Trajectory { states })
    }

    /// J, the number of steps.
    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn flatten(&self) -> Vector {
        let n = self.dim();
        let mut out = Vector::zeros(n * self.states.len());
        for (j, s) in self.states.iter().enumerate() {
            out.rows_mut(j * n, n).copy_from(s);
        }
        out
    }

    pub fn from_flat(x: &Vector, n: usize) -> Result<Self> {
        if n == 0 || !x.len().is_multiple_of(n) {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() });
        }
        let states = (0..x.len() / n).map(|j| x.rows(j * n, n).into_owned()).collect();
        Ok(Trajectory { states })
    }

    pub fn scalar_series(&self) -> Vec<f64> {
        self.states.iter().map(|s| s[0]).collect()
    }
}

/// Symmetrized copy, for covariances accumulated in finite precision.
pub fn clean_cov(c: &Matrix) -> Matrix {
    symmetrize(c)
}
