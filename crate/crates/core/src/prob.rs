//! Probability metrics, Gaussian closed forms, gridded densities, and the
//! Monte Carlo sampling operator.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_factor, spd_inverse, spd_log_det, Matrix, Vector};
use crate::rng::RngStream;
use crate::types::{sample_with_factor, GaussianState};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// log N(x; m, C).
pub fn gaussian_log_density(g: &GaussianState, x: &Vector) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(Error::DimensionMismatch { expected: g.dim(), got: x.len() });
    }
    let prec = spd_inverse(&g.cov)?;
    let logdet = spd_log_det(&g.cov)?;
    let d = x - &g.mean;
    Ok(-0.5 * (d.dot(&(prec * &d)) + logdet + g.dim() as f64 * LN_2PI))
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

fn check_var(v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidVariance(v))
    }
}

/// Hellinger distance between N(m1, v1) and N(m2, v2).
pub fn hellinger_gaussian_1d(m1: f64, v1: f64, m2: f64, v2: f64) -> Result<f64> {
    check_var(v1)?;
    check_var(v2)?;
    let s = v1 + v2;
    let bc = ((-(m1 - m2).powi(2) / (2.0 * s)).exp() * 2.0 * (v1 * v2).sqrt() / s).sqrt();
    Ok((1.0 - bc).max(0.0).sqrt())
}

/// D_KL(N(m1, v1) ‖ N(m2, v2)).
pub fn kl_gaussian_1d(m1: f64, v1: f64, m2: f64, v2: f64) -> Result<f64> {
    check_var(v1)?;
    check_var(v2)?;
    Ok(0.5 * (v2 / v1).ln() + 0.5 * (v1 / v2 - 1.0) + (m2 - m1).powi(2) / (2.0 * v2))
}

/// Total variation ½∫|p − q| between two scalar Gaussians, from the crossing points
/// of the densities.
pub fn tv_gaussian_1d(m1: f64, v1: f64, m2: f64, v2: f64) -> Result<f64> {
    check_var(v1)?;
    check_var(v2)?;
    let (s1, s2) = (v1.sqrt(), v2.sqrt());
    // log p − log q = a x² + b x + c
    let a = 0.5 / v2 - 0.5 / v1;
    let b = m1 / v1 - m2 / v2;
    let c = 0.5 * m2 * m2 / v2 - 0.5 * m1 * m1 / v1 - (s1 / s2).ln();
    let mut cuts = Vec::new();
    if a.abs() < 1e-300 {
        if b != 0.0 {
            cuts.push(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc > 0.0 {
            let sq = disc.sqrt();
            // numerically stable pair
            let q = -0.5 * (b + b.signum() * sq);
            let (r1, r2) = if q != 0.0 { (q / a, c / q) } else { ((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)) };
            cuts.push(r1.min(r2));
            cuts.push(r1.max(r2));
        }
    }
    let p_cdf = |x: f64| if x == f64::INFINITY { 1.0 } else if x == f64::NEG_INFINITY { 0.0 } else { normal_cdf((x - m1) / s1) };
    let q_cdf = |x: f64| if x == f64::INFINITY { 1.0 } else if x == f64::NEG_INFINITY { 0.0 } else { normal_cdf((x - m2) / s2) };
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend(cuts);
    edges.push(f64::INFINITY);
    let mut tv = 0.0;
    for w in edges.windows(2) {
        let d = (p_cdf(w[1]) - p_cdf(w[0])) - (q_cdf(w[1]) - q_cdf(w[0]));
        tv += d.max(0.0);
    }
    Ok(tv.min(1.0))
}

/// Trapezoidal rule on a nonuniform grid.
pub fn trapz(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Density values on a strictly increasing 1-D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GriddedDensity1D {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl GriddedDensity1D {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("grid must be strictly increasing with >= 2 nodes".into()));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter("density values must be finite and nonnegative".into()));
        }
        Ok(GriddedDensity1D { grid, values })
    }

    pub fn from_fn(grid: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.iter().map(|&x| f(x)).collect();
        Self::new(grid, values)
    }

    pub fn integral(&self) -> f64 {
        trapz(&self.grid, &self.values)
    }

    pub fn normalized(&self) -> Result<Self> {
        let z = self.integral();
        if !(z > 0.0) {
            return Err(Error::DegeneratePosterior);
        }
        Ok(GriddedDensity1D { grid: self.grid.clone(), values: self.values.iter().map(|v| v / z).collect() })
    }

    pub fn mean(&self) -> f64 {
        let xv: Vec<f64> = self.grid.iter().zip(&self.values).map(|(x, v)| x * v).collect();
        trapz(&self.grid, &xv) / self.integral()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let xv: Vec<f64> = self.grid.iter().zip(&self.values).map(|(x, v)| (x - m).powi(2) * v).collect();
        trapz(&self.grid, &xv) / self.integral()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Linear interpolation, zero outside the grid.
    pub fn eval(&self, x: f64) -> f64 {
        let g = &self.grid;
        if x < g[0] || x > g[g.len() - 1] {
            return 0.0;
        }
        let i = match g.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
            Ok(i) => return self.values[i],
            Err(i) => i,
        };
        let t = (x - g[i - 1]) / (g[i] - g[i - 1]);
        self.values[i - 1] * (1.0 - t) + self.values[i] * t
    }
}

/// Uniform grid from `lo` to `hi` inclusive with spacing `step`.
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

fn check_same_grid(p: &GriddedDensity1D, q: &GriddedDensity1D) -> Result<()> {
    if p.grid.len() != q.grid.len() || p.grid.iter().zip(&q.grid).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + a.abs())) {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// ½∫|p − q| by the trapezoidal rule.
pub fn tv_distance_grid(p: &GriddedDensity1D, q: &GriddedDensity1D) -> Result<f64> {
    check_same_grid(p, q)?;
    let d: Vec<f64> = p.values.iter().zip(&q.values).map(|(a, b)| (a - b).abs()).collect();
    Ok(0.5 * trapz(&p.grid, &d))
}

/// (½∫(√p − √q)²)^{1/2} by the trapezoidal rule.
pub fn hellinger_distance_grid(p: &GriddedDensity1D, q: &GriddedDensity1D) -> Result<f64> {
    check_same_grid(p, q)?;
    let d: Vec<f64> = p.values.iter().zip(&q.values).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).collect();
    Ok((0.5 * trapz(&p.grid, &d)).sqrt())
}

/// Center-based histogram: bin edges at midpoints between centers, the first and
/// last bins absorb the half-lines; normalized to unit trapezoidal integral.
pub fn empirical_histogram(samples: &[f64], centers: &[f64]) -> Result<GriddedDensity1D> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let counts = histogram_counts(samples, centers)?;
    GriddedDensity1D::new(centers.to_vec(), counts.iter().map(|&c| c as f64).collect())?.normalized()
}

pub fn histogram_counts(samples: &[f64], centers: &[f64]) -> Result<Vec<u64>> {
    if centers.len() < 2 || centers.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("bin centers must be strictly increasing".into()));
    }
    let edges: Vec<f64> = centers.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mut counts = vec![0u64; centers.len()];
    for &s in samples {
        if s.is_nan() {
            continue;
        }
        let k = edges.partition_point(|&e| e < s);
        counts[k] += 1;
    }
    Ok(counts)
}

/// Points with normalized nonnegative weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSamples {
    pub points: Vec<Vector>,
    pub weights: Vec<f64>,
}

impl WeightedSamples {
    pub fn new(points: Vec<Vector>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() || points.is_empty() {
            return Err(Error::DimensionMismatch { expected: points.len(), got: weights.len() });
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter("negative weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("weights sum to {total}")));
        }
        Ok(WeightedSamples { points, weights })
    }

    pub fn uniform(points: Vec<Vector>) -> Self {
        let n = points.len();
        WeightedSamples { points, weights: vec![1.0 / n as f64; n] }
    }

    /// Normalize log-weights with a max shift before exponentiation.
    pub fn from_log_weights(points: Vec<Vector>, log_w: &[f64]) -> Result<Self> {
        let weights = normalize_log_weights(log_w)?;
        Ok(WeightedSamples { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean(&self) -> Vector {
        let mut m = Vector::zeros(self.points[0].len());
        for (p, w) in self.points.iter().zip(&self.weights) {
            m += p * *w;
        }
        m
    }

    pub fn covariance(&self) -> Matrix {
        let m = self.mean();
        let n = m.len();
        let mut c = Matrix::zeros(n, n);
        for (p, w) in self.points.iter().zip(&self.weights) {
            let d = p - &m;
            c += &d * d.transpose() * *w;
        }
        c
    }

    pub fn expectation(&self, f: impl Fn(&Vector) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }

    /// 1 / Σ w².
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

pub fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    let max = log_w.iter().cloned().filter(|x| !x.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::ZeroWeightSum);
    }
    let w: Vec<f64> = log_w.iter().map(|l| if l.is_nan() { 0.0 } else { (l - max).exp() }).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeightSum);
    }
    Ok(w.iter().map(|x| x / total).collect())
}

/// Indices drawn i.i.d. from the weights: first index whose cumulative weight
/// exceeds the uniform draw.
pub fn multinomial_indices(weights: &[f64], n: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    let last = weights.len() - 1;
    (0..n)
        .map(|_| {
            let u = rng.uniform() * acc;
            cdf.partition_point(|&c| c <= u).min(last)
        })
        .collect()
}

pub enum Measure<'a> {
    Weighted(&'a WeightedSamples),
    Gaussian(&'a GaussianState),
}

/// S^N μ: N i.i.d. draws from μ with weights 1/N.
pub fn sampling_operator(mu: Measure<'_>, n: usize, rng: &mut RngStream) -> Result<WeightedSamples> {
    if n == 0 {
        return Err(Error::InvalidParameter("sampling operator needs n >= 1".into()));
    }
    let points = match mu {
        Measure::Weighted(ws) => multinomial_indices(&ws.weights, n, rng)
            .into_iter()
            .map(|i| ws.points[i].clone())
            .collect(),
        Measure::Gaussian(g) => {
            let l = cholesky_factor(&g.cov)?;
            (0..n).map(|_| sample_with_factor(&g.mean, &l, rng)).collect()
        }
    };
    Ok(WeightedSamples::uniform(points))
}

/// Density of the image of p under a piecewise-monotone map, evaluated on `out_grid`.
///
/// The map is sampled at the nodes of p; each monotone run is inverted by linear
/// interpolation and contributes ρ(G⁻¹(x))·|DG⁻¹(x)|.
pub fn pushforward_grid(
    p: &GriddedDensity1D,
    map: impl Fn(f64) -> f64,
    out_grid: &[f64],
) -> Result<GriddedDensity1D> {
    let x = &p.grid;
    let g: Vec<f64> = x.iter().map(|&u| map(u)).collect();
    let mut out = vec![0.0; out_grid.len()];
    let scale = g.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1.0);
    for i in 0..x.len() - 1 {
        let (g0, g1) = (g[i], g[i + 1]);
        if !g0.is_finite() || !g1.is_finite() {
            return Err(Error::NonInvertibleMap(x[i]));
        }
        if (g1 - g0).abs() <= 1e-14 * scale {
            if p.values[i] > 0.0 || p.values[i + 1] > 0.0 {
                return Err(Error::NonInvertibleMap(x[i]));
            }
            continue;
        }
        let (lo, hi) = if g0 < g1 { (g0, g1) } else { (g1, g0) };
        let slope = ((g1 - g0) / (x[i + 1] - x[i])).abs();
        let start = out_grid.partition_point(|&y| y < lo);
        for k in start..out_grid.len() {
            let y = out_grid[k];
            if y > hi {
                break;
            }
            // each image point of a shared node is counted by one segment only
            if y == g1 && i + 2 < x.len() {
                continue;
            }
            let t = (y - g0) / (g1 - g0);
            let rho = p.values[i] * (1.0 - t) + p.values[i + 1] * t;
            out[k] += rho / slope;
        }
    }
    GriddedDensity1D::new(out_grid.to_vec(), out)
}
