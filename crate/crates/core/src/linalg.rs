//! Small dense linear algebra on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

const PSD_TOL: f64 = 1e-10;

pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

fn check_square(a: &Matrix) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
    }
    Ok(())
}

fn trace_scale(a: &Matrix) -> f64 {
    let t: f64 = a.diagonal().iter().map(|x| x.abs()).sum();
    t.max(f64::MIN_POSITIVE)
}

/// Lower-triangular L with L·Lᵀ = (A+Aᵀ)/2.
///
/// Semi-definite input is accepted: a pivot that is numerically zero yields a
/// zero column. A pivot below −1e-10·trace is an error.
pub fn cholesky_factor(a: &Matrix) -> Result<Matrix> {
    check_square(a)?;
    let a = symmetrize(a);
    let n = a.nrows();
    let scale = trace_scale(&a);
    let zero_tol = 1e-14 * scale;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -PSD_TOL * scale || !d.is_finite() {
            return Err(Error::NotPositiveSemiDefinite { index: j, pivot: d });
        }
        if d <= zero_tol {
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(a: &Matrix) -> Result<Matrix> {
    check_square(a)?;
    let s = symmetrize(a);
    match s.clone().cholesky() {
        Some(c) => Ok(symmetrize(&c.inverse())),
        None => Err(first_bad_pivot(&s)),
    }
}

/// Solve A x = b for symmetric positive-definite A.
pub fn spd_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_square(a)?;
    let s = symmetrize(a);
    match s.clone().cholesky() {
        Some(c) => Ok(c.solve(b)),
        None => Err(first_bad_pivot(&s)),
    }
}

pub fn spd_solve_vec(a: &Matrix, b: &Vector) -> Result<Vector> {
    check_square(a)?;
    let s = symmetrize(a);
    match s.clone().cholesky() {
        Some(c) => Ok(c.solve(b)),
        None => Err(first_bad_pivot(&s)),
    }
}

/// log det of a symmetric positive-definite matrix.
pub fn spd_log_det(a: &Matrix) -> Result<f64> {
    check_square(a)?;
    let s = symmetrize(a);
    match s.clone().cholesky() {
        Some(c) => Ok(2.0 * c.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>()),
        None => Err(first_bad_pivot(&s)),
    }
}

fn first_bad_pivot(a: &Matrix) -> Error {
    let n = a.nrows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Error::NotPositiveSemiDefinite { index: j, pivot: d };
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Error::NotPositiveSemiDefinite { index: n, pivot: 0.0 }
}

/// (A + U C V)⁻¹ via the Woodbury identity.
pub fn woodbury_inverse(a: &Matrix, u: &Matrix, c: &Matrix, v: &Matrix) -> Result<Matrix> {
    let p = a.nrows();
    let q = c.nrows();
    check_square(a)?;
    check_square(c)?;
    if u.nrows() != p || u.ncols() != q {
        return Err(Error::DimensionMismatch { expected: p * q, got: u.nrows() * u.ncols() });
    }
    if v.nrows() != q || v.ncols() != p {
        return Err(Error::DimensionMismatch { expected: q * p, got: v.nrows() * v.ncols() });
    }
    let a_inv = spd_inverse(a)?;
    let c_inv = spd_inverse(c)?;
    let inner = &c_inv + v * &a_inv * u;
    let inner_inv = inner
        .try_inverse()
        .ok_or(Error::NotPositiveSemiDefinite { index: 0, pivot: 0.0 })?;
    Ok(&a_inv - &a_inv * u * inner_inv * v * &a_inv)
}

/// Symmetric square root of a PSD matrix by eigendecomposition.
pub fn sym_sqrt(a: &Matrix) -> Result<Matrix> {
    check_square(a)?;
    let eig = SymmetricEigen::new(symmetrize(a));
    let top = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let mut d = eig.eigenvalues.clone();
    for (i, x) in d.iter_mut().enumerate() {
        if *x < -PSD_TOL * top.max(f64::MIN_POSITIVE) {
            return Err(Error::NotPositiveSemiDefinite { index: i, pivot: *x });
        }
        *x = x.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * Matrix::from_diagonal(&d) * q.transpose())
}

/// |x|²_A = xᵀ A⁻¹ x given A⁻¹.
pub fn weighted_sq_norm(x: &Vector, a_inv: &Matrix) -> f64 {
    x.dot(&(a_inv * x))
}

pub fn frobenius(a: &Matrix) -> f64 {
    a.norm()
}

pub fn is_symmetric(a: &Matrix, rel_tol: f64) -> bool {
    if a.nrows() != a.ncols() {
        return false;
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    (a - a.transpose()).amax() <= rel_tol * scale
}

/// Block-diagonal matrix with the given square blocks.
pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((off, off), (k, k)).copy_from(b);
        off += k;
    }
    out
}
