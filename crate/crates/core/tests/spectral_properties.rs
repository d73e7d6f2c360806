use std::f64::consts::PI;

use dmps::{DiffusionModel, FitOptions, SampleMatrix};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn points(n: usize, d: usize) -> impl Strategy<Value = SampleMatrix> {
    prop::collection::vec(-2.0..2.0f64, n * d)
        .prop_map(move |v| SampleMatrix::new(Array2::from_shape_vec((n, d), v).unwrap()).unwrap())
}

fn stable() -> FitOptions {
    FitOptions { lambda_min: Some(1e-3), ..FitOptions::default() }
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Orthogonal matrix from Gram-Schmidt on the given columns.
fn orthogonalize(raw: Array2<f64>) -> Array2<f64> {
    let d = raw.nrows();
    let mut q = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let mut v = raw.column(j).to_owned();
        for k in 0..j {
            let qk = q.column(k).to_owned();
            v = &v - &(&qk * qk.dot(&v));
        }
        let norm = v.dot(&v).sqrt();
        q.column_mut(j).assign(&(v / norm));
    }
    q
}

fn transform(x: &SampleMatrix, q: &Array2<f64>, t: &Array1<f64>) -> SampleMatrix {
    SampleMatrix::new(x.as_array().dot(&q.t()) + t).unwrap()
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn eigenpairs_reconstruct_the_training_kernel(train in (1usize..=4, 10usize..=200).prop_flat_map(|(d, n)| points(n, d))) {
        let model = DiffusionModel::fit(train, FitOptions::default());
        prop_assume!(model.is_ok());
        let model = model.unwrap();
        let p = model.training_kernel();
        let err = frobenius(&(model.spectrum().reconstruct() - &p)) / frobenius(&p);
        prop_assert!(err < 1e-8, "reconstruction error {}", err);
        let phi = &model.spectrum().phis;
        let gram = phi.t().dot(phi) - Array2::<f64>::eye(phi.ncols());
        prop_assert!(max_abs(&gram) < 1e-8);
        let l = &model.spectrum().lambdas;
        prop_assert!(l.windows(2).into_iter().all(|w| w[0] >= w[1]));
        // P is symmetric but not stochastic, so only the lower clamp is exact.
        prop_assert!(l[l.len() - 1] >= 0.0);
    }

    #[test]
    fn truncated_inverse_inverts_the_generator_on_kept_modes(
        train in (1usize..=3, 10usize..=80).prop_flat_map(|(d, n)| points(n, d)),
        coeffs in prop::collection::vec(-1.0..1.0f64, 80),
    ) {
        let model = DiffusionModel::fit(train, FitOptions::default());
        prop_assume!(model.is_ok());
        let model = model.unwrap();
        let (spec, inv) = (model.spectrum(), model.inverse());
        let mut g = Array1::<f64>::zeros(spec.len());
        for (slot, &k) in inv.kept.iter().enumerate() {
            g = g + &spec.phis.column(k) * coeffs[slot % coeffs.len()];
        }
        let back = dmps::spectral::apply_generator(spec, &inv.apply_inverse(spec, &g)).unwrap();
        let err = (&back - &g).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(err < 1e-6 * scale.max(1e-12), "composition error {} at scale {}", err, scale);
    }

    #[test]
    fn drift_is_equivariant_under_rigid_motions(
        (train, particles, raw, shift) in (1usize..=3).prop_flat_map(|d| (
            (6usize..=15).prop_flat_map(move |n| points(n, d)),
            (1usize..=6).prop_flat_map(move |m| points(m, d)),
            prop::collection::vec(-1.0..1.0f64, d * d).prop_map(move |v| Array2::from_shape_vec((d, d), v).unwrap()),
            prop::collection::vec(-5.0..5.0f64, d).prop_map(Array1::from),
        )),
    ) {
        // skip near-singular draws
        let q = orthogonalize(raw);
        prop_assume!(q.iter().all(|v| v.is_finite()));
        let zero = Array1::zeros(shift.len());
        let eye = Array2::eye(shift.len());

        let fitted = DiffusionModel::fit(train.clone(), stable());
        prop_assume!(fitted.is_ok());
        let base = fitted.unwrap().drift_field(&particles).unwrap();
        let scale = max_abs(&base).max(1e-300);

        let moved = DiffusionModel::fit(transform(&train, &eye, &shift), stable()).unwrap();
        let translated = moved.drift_field(&transform(&particles, &eye, &shift)).unwrap();
        prop_assert!(max_abs(&(&translated - &base)) < 1e-6 * scale);

        let turned = DiffusionModel::fit(transform(&train, &q, &zero), stable()).unwrap();
        let rotated = turned.drift_field(&transform(&particles, &q, &zero)).unwrap();
        prop_assert!(max_abs(&(&rotated - &base.dot(&q.t()))) < 1e-6 * scale);
    }
}

#[test]
fn circle_has_near_unit_top_eigenvalue() {
    let rows: Vec<Vec<f64>> = (0..200)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / 200.0;
            vec![t.cos(), t.sin()]
        })
        .collect();
    let model = DiffusionModel::fit(SampleMatrix::from_rows(&rows).unwrap(), FitOptions::default()).unwrap();
    let top = model.spectrum().lambdas[0];
    assert!((top - 1.0).abs() < 5e-2, "top eigenvalue {top}");
}

#[test]
fn reflected_configuration_gives_antisymmetric_drift() {
    let train = SampleMatrix::from_rows(&[vec![-1.0, 0.2], vec![-0.5, -0.4], vec![0.5, -0.4], vec![1.0, 0.2], vec![0.0, 0.7]]).unwrap();
    let particles = SampleMatrix::from_rows(&[vec![-0.3, 0.1], vec![0.3, 0.1]]).unwrap();
    let model = DiffusionModel::fit(train, stable()).unwrap();
    let drift = model.drift_field(&particles).unwrap();
    let scale = max_abs(&drift);
    assert!((drift[[0, 0]] + drift[[1, 0]]).abs() < 1e-10 * scale.max(1.0));
    assert!((drift[[0, 1]] - drift[[1, 1]]).abs() < 1e-10 * scale.max(1.0));
}
