use dmps::eval::{exact_ot_small, sinkhorn_distance, OTConfig, OTReport};
use dmps::SampleMatrix;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn points(n: usize, d: usize) -> impl Strategy<Value = SampleMatrix> {
    prop::collection::vec(-1.0..1.0f64, n * d)
        .prop_map(move |v| SampleMatrix::new(Array2::from_shape_vec((n, d), v).unwrap()).unwrap())
}

fn tight(reg: f64) -> OTConfig {
    OTConfig { reg, max_iters: 20_000, marginal_tol: 1e-11, ..OTConfig::default() }
}

/// Near-permutation plans can stall above the tolerance, so equality is
/// asserted up to what the remaining marginal violation can move the cost.
fn slack(x: &OTReport, y: &OTReport, c_max: f64) -> f64 {
    1e-10 + c_max * (x.residual + y.residual)
}

fn max_cost(a: &SampleMatrix, b: &SampleMatrix, squared: bool) -> f64 {
    let mut m = 0.0f64;
    for p in a.as_array().rows() {
        for q in b.as_array().rows() {
            let d2: f64 = p.iter().zip(q.iter()).map(|(u, v)| (u - v) * (u - v)).sum();
            m = m.max(if squared { d2 } else { d2.sqrt() });
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn swapping_arguments_keeps_the_cost(
        (a, b) in (1usize..=3).prop_flat_map(|d| ((1usize..=12).prop_flat_map(move |n| points(n, d)), (1usize..=12).prop_flat_map(move |n| points(n, d)))),
        squared in any::<bool>(),
    ) {
        let cfg = OTConfig { squared_cost: squared, ..tight(0.05) };
        let ab = sinkhorn_distance(&a, &b, &cfg).unwrap();
        let ba = sinkhorn_distance(&b, &a, &cfg).unwrap();
        let tol = slack(&ab, &ba, max_cost(&a, &b, squared));
        prop_assert!((ab.cost - ba.cost).abs() < tol, "{} vs {}", ab.cost, ba.cost);
    }

    #[test]
    fn joint_translation_keeps_the_cost(
        (a, b, t) in (1usize..=3).prop_flat_map(|d| (
            (1usize..=12).prop_flat_map(move |n| points(n, d)),
            (1usize..=12).prop_flat_map(move |n| points(n, d)),
            prop::collection::vec(-3.0..3.0f64, d).prop_map(Array1::from),
        )),
    ) {
        let cfg = tight(0.05);
        let base = sinkhorn_distance(&a, &b, &cfg).unwrap();
        let shift = |x: &SampleMatrix| SampleMatrix::new(x.as_array() + &t).unwrap();
        let moved = sinkhorn_distance(&shift(&a), &shift(&b), &cfg).unwrap();
        let tol = slack(&base, &moved, max_cost(&a, &b, false));
        prop_assert!((base.cost - moved.cost).abs() < tol, "{} vs {}", base.cost, moved.cost);
    }

    #[test]
    fn cost_decreases_toward_exact_ot_as_reg_shrinks(
        (a, b) in (1usize..=3, 2usize..=10).prop_flat_map(|(d, n)| (points(n, d), points(n, d))),
    ) {
        // Near-permutation plans converge slowly at small reg; 1e-9 marginals
        // bound the cost error well below the tolerances used here.
        let exact = exact_ot_small(&a, &b).unwrap();
        let mut previous = f64::INFINITY;
        for reg in [0.3, 0.1, 0.03, 0.01] {
            let cfg = OTConfig { marginal_tol: 1e-9, ..tight(reg) };
            let r = sinkhorn_distance(&a, &b, &cfg).unwrap();
            prop_assert!(r.cost <= previous + 1e-7, "reg {}: {} after {}", reg, r.cost, previous);
            prop_assert!(r.cost >= exact - 1e-7, "reg {}: {} below exact {}", reg, r.cost, exact);
            previous = r.cost;
        }
        prop_assert!(previous - exact < 10.0 * 0.01);
    }
}

#[test]
fn exact_ot_ignores_relabeling() {
    let a = SampleMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
    let b = SampleMatrix::from_rows(&[vec![0.5, 0.5], vec![2.0, 1.0], vec![0.0, -1.0]]).unwrap();
    let base = exact_ot_small(&a, &b).unwrap();
    let pa = a.select(&[2, 0, 1]);
    let pb = b.select(&[1, 2, 0]);
    assert!((exact_ot_small(&pa, &pb).unwrap() - base).abs() < 1e-14);
    assert!((exact_ot_small(&a, &a).unwrap()).abs() < 1e-15);
}
