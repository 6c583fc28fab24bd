use assim_core::prob::{
    hellinger_distance_grid, hellinger_gaussian_1d, kl_gaussian_1d, normal_pdf, sampling_operator, tv_distance_grid,
    tv_gaussian_1d, uniform_grid, Measure,
};
use assim_core::{GaussianState, GriddedDensity1D, RngStream, Vector, WeightedSamples};
use proptest::prelude::*;

fn random_pair(rng: &mut RngStream) -> (f64, f64, f64, f64) {
    let m1 = 3.0 * rng.normal();
    let m2 = 3.0 * rng.normal();
    let v1 = (2.0 * rng.normal()).exp();
    let v2 = (2.0 * rng.normal()).exp();
    (m1, v1, m2, v2)
}

#[test]
fn tv_hellinger_chain_on_gaussian_pairs() {
    let mut rng = RngStream::new(21, 8);
    for _ in 0..1000 {
        let (m1, v1, m2, v2) = random_pair(&mut rng);
        let tv = tv_gaussian_1d(m1, v1, m2, v2).unwrap();
        let h = hellinger_gaussian_1d(m1, v1, m2, v2).unwrap();
        let slack = 1e-12;
        assert!(0.0 <= tv / 2f64.sqrt() + slack);
        assert!(tv / 2f64.sqrt() <= h + slack, "{tv} {h}");
        assert!(h <= tv.sqrt() + slack, "{tv} {h}");
        assert!(tv.sqrt() <= 1.0 + slack);
    }
}

#[test]
fn kl_bounds_on_gaussian_pairs() {
    let mut rng = RngStream::new(22, 8);
    for _ in 0..1000 {
        let (m1, v1, m2, v2) = random_pair(&mut rng);
        let tv = tv_gaussian_1d(m1, v1, m2, v2).unwrap();
        let h = hellinger_gaussian_1d(m1, v1, m2, v2).unwrap();
        let kl = kl_gaussian_1d(m1, v1, m2, v2).unwrap();
        assert!(h * h <= 0.5 * kl + 1e-12);
        assert!(tv * tv <= kl + 1e-12);
    }
}

#[test]
fn hellinger_controls_mean_difference() {
    let mut rng = RngStream::new(23, 8);
    for _ in 0..1000 {
        let (m1, v1, m2, v2) = random_pair(&mut rng);
        let h = hellinger_gaussian_1d(m1, v1, m2, v2).unwrap();
        let second = m1 * m1 + v1 + m2 * m2 + v2;
        assert!((m1 - m2).abs() <= 2.0 * second.sqrt() * h + 1e-10);
    }
}

#[test]
fn grid_hellinger_matches_closed_form() {
    let grid = uniform_grid(-20.0, 20.0, 1e-3);
    for (m1, v1, m2, v2) in [(0.0, 1.0, 1.0, 1.0), (0.5, 2.0, -1.0, 0.5), (0.0, 1.0, 0.0, 4.0)] {
        let p = GriddedDensity1D::from_fn(grid.clone(), |x| normal_pdf(x, m1, v1)).unwrap();
        let q = GriddedDensity1D::from_fn(grid.clone(), |x| normal_pdf(x, m2, v2)).unwrap();
        let grid_h = hellinger_distance_grid(&p, &q).unwrap();
        let exact = hellinger_gaussian_1d(m1, v1, m2, v2).unwrap();
        assert!((grid_h - exact).abs() < 1e-6, "{grid_h} {exact}");
        let grid_tv = tv_distance_grid(&p, &q).unwrap();
        assert!((grid_tv - tv_gaussian_1d(m1, v1, m2, v2).unwrap()).abs() < 1e-5);
    }
}

fn mixture(grid: &[f64], params: &[(f64, f64, f64)]) -> GriddedDensity1D {
    GriddedDensity1D::from_fn(grid.to_vec(), |x| params.iter().map(|(w, m, v)| w * normal_pdf(x, *m, *v)).sum())
        .unwrap()
        .normalized()
        .unwrap()
}

fn component() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.1f64..1.0, -3.0f64..3.0, 0.1f64..2.0)
}

proptest! {
    #[test]
    fn grid_metric_axioms(
        a in prop::collection::vec(component(), 1..3),
        b in prop::collection::vec(component(), 1..3),
        c in prop::collection::vec(component(), 1..3),
    ) {
        let grid = uniform_grid(-10.0, 10.0, 0.01);
        let (p, q, r) = (mixture(&grid, &a), mixture(&grid, &b), mixture(&grid, &c));
        for d in [tv_distance_grid, hellinger_distance_grid] {
            let pq = d(&p, &q).unwrap();
            prop_assert!((pq - d(&q, &p).unwrap()).abs() < 1e-8);
            prop_assert!(pq <= d(&p, &r).unwrap() + d(&r, &q).unwrap() + 1e-8);
            prop_assert!(d(&p, &p).unwrap().abs() < 1e-8);
        }
    }
}

/// RMS over replications of S^N μ(f) − μ(f), maximized over a family of bounded f.
fn sampling_rms_sup(n: usize, reps: usize, seed: u64) -> f64 {
    let (m, v) = (0.3, 2.0);
    let mu = GaussianState::scalar(m, v);
    let mut frng = RngStream::new(seed, 8);
    let funcs: Vec<(f64, f64)> = (0..100).map(|_| (0.1 + 4.9 * frng.uniform(), std::f64::consts::TAU * frng.uniform())).collect();
    let mut rng = RngStream::new(seed, 3);
    let mut sq = vec![0.0; funcs.len()];
    for _ in 0..reps {
        let s = sampling_operator(Measure::Gaussian(&mu), n, &mut rng).unwrap();
        for (k, &(w, phi)) in funcs.iter().enumerate() {
            let exact = (w * m + phi).cos() * (-w * w * v / 2.0).exp();
            let est = s.expectation(|x| (w * x[0] + phi).cos());
            sq[k] += (est - exact).powi(2);
        }
    }
    sq.iter().map(|s| (s / reps as f64).sqrt()).fold(0.0, f64::max)
}

#[test]
fn sampling_operator_rms_bound() {
    for n in [10, 100, 1000] {
        let sup = sampling_rms_sup(n, 200, 5);
        assert!(sup <= 1.05 / (n as f64).sqrt(), "N={n}: {sup}");
    }
}

/// Particle approximation of one filtering step on a three-point space against exact Bayes.
#[test]
fn particle_step_within_kappa_bound() {
    let kappa: f64 = 0.5;
    let prior = [0.5, 0.3, 0.2];
    let kernel = [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.1, 0.2, 0.7]];
    let g = [0.5, 2.0, 1.0];
    assert!(g.iter().all(|&x| (kappa..=1.0 / kappa).contains(&x)));
    let predicted: Vec<f64> = (0..3).map(|k| (0..3).map(|i| prior[i] * kernel[i][k]).sum()).collect();
    let z: f64 = (0..3).map(|k| g[k] * predicted[k]).sum();
    let exact: Vec<f64> = (0..3).map(|k| g[k] * predicted[k] / z).collect();
    let points: Vec<Vector> = (0..3).map(|k| Vector::from_element(1, k as f64)).collect();
    let predicted_ws = WeightedSamples::new(points.clone(), predicted.clone()).unwrap();

    let n = 100;
    let reps = 4000;
    let mut rng = RngStream::new(7, 4);
    // the sup over |f| ≤ 1 on three points is attained at sign vectors
    let signs: Vec<[f64; 3]> = (0..8).map(|b| [0, 1, 2].map(|i| if b >> i & 1 == 1 { 1.0 } else { -1.0 })).collect();
    let mut sq = vec![0.0; signs.len()];
    for _ in 0..reps {
        let s = sampling_operator(Measure::Weighted(&predicted_ws), n, &mut rng).unwrap();
        let log_w: Vec<f64> = s.points.iter().map(|p| g[p[0] as usize].ln()).collect();
        let post = WeightedSamples::from_log_weights(s.points.clone(), &log_w).unwrap();
        for (k, f) in signs.iter().enumerate() {
            let est = post.expectation(|x| f[x[0] as usize]);
            let truth: f64 = (0..3).map(|i| f[i] * exact[i]).sum();
            sq[k] += (est - truth).powi(2);
        }
    }
    let d = sq.iter().map(|s| (s / reps as f64).sqrt()).fold(0.0, f64::max);
    let bound = 2.0 * kappa.powi(-2) * (0.0 + 1.0 / (n as f64).sqrt());
    assert!(d <= bound, "{d} > {bound}");
    assert!(d > 0.0);
}
