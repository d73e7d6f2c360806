use dmps::samplers::{dmps_run, svgd_run, ula_run, SamplerConfig};
use dmps::seed;
use dmps::{DiffusionModel, FitOptions, SampleMatrix};
use ndarray::{array, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian(n: usize, d: usize, s: u64) -> SampleMatrix {
    let mut rng = seed::rng(s);
    SampleMatrix::new(Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal))).unwrap()
}

fn stable() -> FitOptions {
    FitOptions { lambda_min: Some(1e-3), ..FitOptions::default() }
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn moments(x: &SampleMatrix) -> (f64, f64) {
    let v = x.as_array().column(0);
    let mean = v.mean().unwrap();
    (mean, v.mapv(|t| (t - mean).powi(2)).mean().unwrap())
}

#[test]
fn svgd_with_learned_gaussian_score_matches_the_moments() {
    let model = DiffusionModel::fit(gaussian(1000, 1, 11), FitOptions::default()).unwrap();
    let init = SampleMatrix::new(Array2::from_shape_fn((100, 1), |(i, _)| -0.5 + i as f64 / 99.0)).unwrap();
    let cfg = SamplerConfig { step_size: 0.1, max_iters: 3000, ..SamplerConfig::default() };
    let out = svgd_run(|x| model.score_at(x), &init, &cfg).unwrap();
    let (mean, var) = moments(out.last());
    assert!(mean.abs() < 0.1, "mean {mean}");
    assert!((var - 1.0).abs() < 0.2, "variance {var}");
}

#[test]
fn ula_on_an_ou_process_reaches_the_discrete_stationary_variance() {
    let h = 1e-3;
    let init = SampleMatrix::new(Array2::zeros((2000, 1))).unwrap();
    let cfg = SamplerConfig { step_size: h, max_iters: 10_000, seed: 5, ..SamplerConfig::default() };
    let out = ula_run(|x| Ok(-x.as_array()), &init, &cfg).unwrap();
    let (_, var) = moments(out.last());
    let target = 2.0 * h / (1.0 - (1.0 - h) * (1.0 - h));
    assert!((var / target - 1.0).abs() < 0.1, "variance {var} vs {target}");
}

#[test]
fn ula_commutes_with_translation() {
    let train = gaussian(200, 2, 12);
    let shift = array![3.0, -1.5];
    let moved = SampleMatrix::new(train.as_array() + &shift).unwrap();
    let (a, b) = (DiffusionModel::fit(train, stable()).unwrap(), DiffusionModel::fit(moved, stable()).unwrap());
    let init = gaussian(30, 2, 13);
    let init_moved = SampleMatrix::new(init.as_array() + &shift).unwrap();
    let cfg = SamplerConfig { step_size: 1e-3, max_iters: 50, seed: 2, ..SamplerConfig::default() };
    let x = ula_run(|q| a.score_at(q), &init, &cfg).unwrap();
    let y = ula_run(|q| b.score_at(q), &init_moved, &cfg).unwrap();
    let back = y.last().as_array() - &shift;
    assert!(max_abs_diff(x.last().as_array(), &back) < 1e-9);
}

/// Rotation by `t` in the plane, applied to row vectors.
fn rotate(x: &SampleMatrix, t: f64, shift: [f64; 2]) -> SampleMatrix {
    let q = array![[t.cos(), -t.sin()], [t.sin(), t.cos()]];
    SampleMatrix::new(x.as_array().dot(&q.t()) + &array![shift[0], shift[1]]).unwrap()
}

#[test]
fn deterministic_samplers_commute_with_rigid_motions() {
    let (t, shift) = (0.7, [2.0, -1.0]);
    let train = gaussian(150, 2, 14);
    let init = gaussian(20, 2, 15);
    let a = DiffusionModel::fit(train.clone(), stable()).unwrap();
    let b = DiffusionModel::fit(rotate(&train, t, shift), stable()).unwrap();

    let cfg = SamplerConfig { step_size: 5.0, max_iters: 20, tol: Some(0.0), ..SamplerConfig::default() };
    let x = dmps_run(&a, &init, &cfg).unwrap();
    let y = dmps_run(&b, &rotate(&init, t, shift), &cfg).unwrap();
    let expect = rotate(x.last(), t, shift);
    assert!(max_abs_diff(expect.as_array(), y.last().as_array()) < 1e-8);

    let cfg = SamplerConfig { step_size: 0.05, max_iters: 20, ..SamplerConfig::default() };
    let x = svgd_run(|q| a.score_at(q), &init, &cfg).unwrap();
    let y = svgd_run(|q| b.score_at(q), &rotate(&init, t, shift), &cfg).unwrap();
    let expect = rotate(x.last(), t, shift);
    assert!(max_abs_diff(expect.as_array(), y.last().as_array()) < 1e-8);
}

#[test]
fn dmps_is_bitwise_deterministic() {
    let model = DiffusionModel::fit(gaussian(100, 2, 16), stable()).unwrap();
    let init = gaussian(10, 2, 17);
    let cfg = SamplerConfig { step_size: 5.0, max_iters: 30, snapshot_every: Some(10), ..SamplerConfig::default() };
    let a = dmps_run(&model, &init, &cfg).unwrap();
    let b = dmps_run(&model, &init, &cfg).unwrap();
    assert_eq!(a.snapshots.len(), b.snapshots.len());
    for ((i, x), (j, y)) in a.snapshots.iter().zip(b.snapshots.iter()) {
        assert_eq!(i, j);
        assert_eq!(x.as_array(), y.as_array());
    }
}

#[test]
fn one_dmps_step_is_one_drift_step() {
    let model = DiffusionModel::fit(gaussian(80, 3, 18), stable()).unwrap();
    let init = gaussian(7, 3, 19);
    let h = 3.0;
    let cfg = SamplerConfig { step_size: h, max_iters: 1, tol: Some(f64::INFINITY), ..SamplerConfig::default() };
    let out = dmps_run(&model, &init, &cfg).unwrap();
    // drift_field already carries the 1/M average
    let expect = init.as_array() - &(model.drift_field(&init).unwrap() * h);
    assert_eq!(out.last().as_array(), &expect);
    assert_eq!(out.iters_run, 1);
}
