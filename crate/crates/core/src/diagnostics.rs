//! Error statistics, rank histograms, 1-D Kalman covariance dynamics and filter comparisons.

use crate::error::{Error, Result};
use crate::filters::{FilterRecord, FilterRun};
use crate::linalg::cholesky_factor;
use crate::models::ObservationSequence;
use crate::rng::RngStream;
use crate::types::sample_with_factor;

/// g(c) = γ²(λ²c + σ²)/(γ² + λ²c + σ²).
pub fn kalman_1d_map(c: f64, lambda: f64, sigma2: f64, gamma2: f64) -> f64 {
    let a = lambda * lambda * c + sigma2;
    gamma2 * a / (gamma2 + a)
}

/// g'(c) = λ²γ⁴/(γ² + λ²c + σ²)².
pub fn kalman_1d_map_derivative(c: f64, lambda: f64, sigma2: f64, gamma2: f64) -> f64 {
    let l2 = lambda * lambda;
    let d = gamma2 + l2 * c + sigma2;
    l2 * gamma2 * gamma2 / (d * d)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedPoints {
    pub c_plus: f64,
    pub c_minus: f64,
    pub slope_plus: f64,
    pub slope_minus: f64,
    pub plus_stable: bool,
    pub minus_stable: bool,
}

/// Roots of λ²c² + (γ²(1−λ²) + σ²)c − γ²σ² = 0.
///
/// With σ = 0 the roots are named c₊ = 0 and c₋ = γ²(λ²−1)/λ² whatever their order.
pub fn kalman_1d_fixed_points(lambda: f64, sigma2: f64, gamma2: f64) -> Result<FixedPoints> {
    if lambda == 0.0 {
        return Err(Error::DegenerateCase("lambda = 0: g is constant"));
    }
    if !(sigma2 >= 0.0 && gamma2 > 0.0) {
        return Err(Error::InvalidVariance(sigma2.min(gamma2)));
    }
    let l2 = lambda * lambda;
    let (c_plus, c_minus) = if sigma2 == 0.0 {
        (0.0, gamma2 * (l2 - 1.0) / l2)
    } else {
        let b = gamma2 * (1.0 - l2) + sigma2;
        let disc = (b * b + 4.0 * l2 * gamma2 * sigma2).sqrt();
        // c₊ via the cancellation-free product form
        let c_minus = (-b - disc) / (2.0 * l2);
        let c_plus = if b > 0.0 { 2.0 * gamma2 * sigma2 / (b + disc) } else { (-b + disc) / (2.0 * l2) };
        (c_plus, c_minus)
    };
    let slope_plus = kalman_1d_map_derivative(c_plus, lambda, sigma2, gamma2);
    let slope_minus = kalman_1d_map_derivative(c_minus, lambda, sigma2, gamma2);
    Ok(FixedPoints { c_plus, c_minus, slope_plus, slope_minus, plus_stable: slope_plus < 1.0, minus_stable: slope_minus < 1.0 })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorSummary {
    pub mean: f64,
    pub sd: f64,
    pub excess_kurtosis: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorSeries {
    pub errors: Vec<f64>,
    pub running_mean: Vec<f64>,
}

impl ErrorSeries {
    pub fn from_errors(errors: Vec<f64>) -> Self {
        let mut acc = 0.0;
        let running_mean = errors
            .iter()
            .enumerate()
            .map(|(i, e)| {
                acc += e;
                acc / (i + 1) as f64
            })
            .collect();
        ErrorSeries { errors, running_mean }
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    /// Default window: the second half of the run.
    pub fn default_window(&self) -> std::ops::Range<usize> {
        self.len() / 2..self.len()
    }

    pub fn summary(&self) -> ErrorSummary {
        self.summary_over(self.default_window())
    }

    pub fn summary_over(&self, window: std::ops::Range<usize>) -> ErrorSummary {
        summarize(&self.errors[window])
    }

    pub fn mean_square(&self, window: std::ops::Range<usize>) -> f64 {
        let w = &self.errors[window];
        w.iter().map(|e| e * e).sum::<f64>() / w.len() as f64
    }
}

/// Mean, sample SD and excess kurtosis m4/m2² − 3 (central moments).
pub fn summarize(x: &[f64]) -> ErrorSummary {
    let n = x.len();
    if n == 0 {
        return ErrorSummary { mean: f64::NAN, sd: f64::NAN, excess_kurtosis: f64::NAN, count: 0 };
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / nf;
    let sd = if n > 1 { (m2 * nf / (nf - 1.0)).sqrt() } else { 0.0 };
    ErrorSummary { mean, sd, excess_kurtosis: m4 / (m2 * m2) - 3.0, count: n }
}

pub fn error_series(records: &[FilterRecord]) -> ErrorSeries {
    ErrorSeries::from_errors(records.iter().map(|r| r.error).collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankHistogram {
    /// counts[r − 1] is the number of steps where y_j had rank r.
    pub counts: Vec<usize>,
}

impl RankHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Pearson χ² statistic against the uniform histogram.
    pub fn chi_square(&self) -> f64 {
        let expected = self.total() as f64 / self.counts.len() as f64;
        self.counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
    }
}

/// Rank of y_j among the perturbed predicted observations of the forecast ensemble.
pub fn rank_of(members: &[f64], y: f64) -> usize {
    1 + members.iter().filter(|&&m| m < y).count()
}

/// Rank histogram from records carrying forecast ensembles (records with j = 0 are skipped).
pub fn rank_histogram(
    records: &[FilterRecord],
    data: &ObservationSequence,
    component: usize,
    rng: &mut RngStream,
) -> Result<RankHistogram> {
    let l = cholesky_factor(&data.gamma)?;
    let zero = crate::linalg::Vector::zeros(data.gamma.nrows());
    let mut counts: Option<Vec<usize>> = None;
    for r in records.iter().filter(|r| r.j > 0) {
        let members = r.forecast.as_ref().ok_or(Error::NonEnsembleFilter)?;
        let counts = counts.get_or_insert_with(|| vec![0; members.len() + 1]);
        if counts.len() != members.len() + 1 {
            return Err(Error::DimensionMismatch { expected: counts.len() - 1, got: members.len() });
        }
        let y = data.y(r.j);
        if component >= y.len() {
            return Err(Error::DimensionMismatch { expected: y.len(), got: component + 1 });
        }
        let perturbed: Vec<f64> = members
            .iter()
            .map(|v| Ok((data.operator.apply(v)? + sample_with_factor(&zero, &l, rng))[component]))
            .collect::<Result<_>>()?;
        counts[rank_of(&perturbed, y[component]) - 1] += 1;
    }
    counts.map(|counts| RankHistogram { counts }).ok_or(Error::NonEnsembleFilter)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub summary: ErrorSummary,
    pub mean_square: f64,
    /// Window mean of e_j − e_j(first filter).
    pub paired_difference: f64,
    pub blow_up: Option<usize>,
}

/// Compare filters run on one truth and data stream over the second half of the shortest run.
pub fn compare_filters(runs: &[FilterRun]) -> Result<Vec<ComparisonRow>> {
    let Some(first) = runs.first() else { return Ok(Vec::new()) };
    for r in &runs[1..] {
        if r.truth != first.truth || r.data.observations != first.data.observations {
            return Err(Error::ConfigMismatch);
        }
    }
    let len = runs.iter().map(|r| r.records.len()).min().unwrap_or(0);
    let window = len / 2..len;
    let reference = first.errors();
    Ok(runs
        .iter()
        .map(|r| {
            let series = error_series(&r.records[..len]);
            let diff: Vec<f64> = window.clone().map(|j| series.errors[j] - reference[j]).collect();
            ComparisonRow {
                label: r.kind.label().to_string(),
                summary: series.summary_over(window.clone()),
                mean_square: series.mean_square(window.clone()),
                paired_difference: summarize(&diff).mean,
                blow_up: r.blow_up,
            }
        })
        .collect())
}
