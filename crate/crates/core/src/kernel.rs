//! Gaussian kernels with anisotropic (square-root degree) normalization.
//!
//! Every normalizing sum runs over the training set, whatever the query
//! points are:
//!
//! ```text
//! K(x, y)  = exp(-|x - y|^2 / (2 eps))
//! d(x)     = sum_i K(x, z_i)
//! M(x, y)  = K(x, y) / (sqrt d(x) sqrt d(y))
//! Pf(x, y) = M(x, y) / sum_i M(z_i, y)
//! Pb(x, y) = M(x, y) / sum_i M(x, z_i)
//! P        = (Pf + Pb) / 2
//! ```
//!
//! Sums are plain sums over the `N` training points, without a `1/N` factor.
//! Writing `mass(x) = sum_i M(x, z_i)`, the two normalizers are `mass(y)` and
//! `mass(x)`, so `P(x, y) = M(x, y) (1/mass(x) + 1/mass(y)) / 2` is symmetric
//! as a function of its two arguments.

use ndarray::{Array1, Array2, Array3, ArrayView1};
#[cfg(test)]
use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{sq_dist, SampleMatrix};

/// Kernel bandwidth `eps`, in squared length units.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {eps}")));
        }
        Ok(Bandwidth(eps))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Bandwidth {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Bandwidth::new(v)
    }
}

impl From<Bandwidth> for f64 {
    fn from(b: Bandwidth) -> f64 {
        b.0
    }
}

/// Median of all pairwise Euclidean distances (mean of the two central
/// values when the count is even).
pub fn median_pairwise_distance(points: &SampleMatrix) -> Result<f64> {
    let n = points.count();
    if n < 2 {
        return Err(Error::invalid(format!(
            "median heuristic needs at least 2 points, got {n}"
        )));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let xi = points.row(i);
        for j in (i + 1)..n {
            dists.push(sq_dist(xi, points.row(j)).sqrt());
        }
    }
    let len = dists.len();
    let mid = len / 2;
    let (_, upper, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if len % 2 == 1 {
        Ok(upper)
    } else {
        let lower = dists[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(0.5 * (lower + upper))
    }
}

/// Median heuristic `eps = med^2 / (2 ln N)`.
pub fn median_bandwidth(train: &SampleMatrix) -> Result<Bandwidth> {
    let med = median_pairwise_distance(train)?;
    if med <= 0.0 {
        return Err(Error::DegenerateData(
            "median pairwise distance is zero (points are duplicated)".into(),
        ));
    }
    let n = train.count() as f64;
    Bandwidth::new(med * med / (2.0 * n.ln()))
}

#[inline]
pub(crate) fn gauss(sq: f64, eps: f64) -> f64 {
    (-sq / (2.0 * eps)).exp()
}

/// Raw Gaussian kernel matrix `K[i, j] = K(x_i, y_j)`.
pub fn gaussian_kernel(x: &SampleMatrix, y: &SampleMatrix, eps: Bandwidth) -> Result<Array2<f64>> {
    x.ensure_same_dim(y, "gaussian_kernel")?;
    let e = eps.value();
    Ok(Array2::from_shape_fn((x.count(), y.count()), |(i, j)| {
        gauss(sq_dist(x.row(i), y.row(j)), e)
    }))
}

/// Gradient of the Gaussian kernel in its first argument, shaped `n x m x d`.
pub fn gaussian_kernel_grad1(
    x: &SampleMatrix,
    y: &SampleMatrix,
    eps: Bandwidth,
) -> Result<Array3<f64>> {
    x.ensure_same_dim(y, "gaussian_kernel_grad1")?;
    let e = eps.value();
    let d = x.dim();
    let mut out = Array3::zeros((x.count(), y.count(), d));
    for (i, xi) in x.rows().into_iter().enumerate() {
        for (j, yj) in y.rows().into_iter().enumerate() {
            let k = gauss(sq_dist(xi, yj), e);
            for c in 0..d {
                out[[i, j, c]] = -(xi[c] - yj[c]) / e * k;
            }
        }
    }
    Ok(out)
}

/// Training-set quantities shared by every normalized kernel evaluation.
#[derive(Debug, Clone)]
pub struct TrainingMeasure {
    train: SampleMatrix,
    eps: Bandwidth,
    inv_sqrt_degree: Array1<f64>,
}

/// Normalizers of one point against the training set.
#[derive(Debug, Clone)]
pub(crate) struct PointProfile {
    /// `d(x) = sum_i K(x, z_i)`
    pub degree: f64,
    /// `mass(x) = sum_i M(x, z_i)`
    pub mass: f64,
    /// `K(x, z_i)` for every training point.
    pub k_train: Array1<f64>,
}

impl TrainingMeasure {
    pub fn new(train: SampleMatrix, eps: Bandwidth) -> Self {
        let n = train.count();
        let e = eps.value();
        let mut degree = Array1::<f64>::zeros(n);
        for i in 0..n {
            // K(z_i, z_i) = 1
            degree[i] += 1.0;
            for j in (i + 1)..n {
                let k = gauss(sq_dist(train.row(i), train.row(j)), e);
                degree[i] += k;
                degree[j] += k;
            }
        }
        let inv_sqrt_degree = degree.mapv(|d| 1.0 / d.sqrt());
        TrainingMeasure {
            train,
            eps,
            inv_sqrt_degree,
        }
    }

    pub fn train(&self) -> &SampleMatrix {
        &self.train
    }

    pub fn eps(&self) -> Bandwidth {
        self.eps
    }

    pub fn degrees(&self) -> Array1<f64> {
        self.inv_sqrt_degree.mapv(|v| 1.0 / (v * v))
    }

    pub(crate) fn inv_sqrt_degree(&self) -> &Array1<f64> {
        &self.inv_sqrt_degree
    }

    pub(crate) fn profile(&self, x: ArrayView1<'_, f64>) -> PointProfile {
        let e = self.eps.value();
        let k_train: Array1<f64> = self
            .train
            .rows()
            .into_iter()
            .map(|z| gauss(sq_dist(x, z), e))
            .collect();
        let degree = k_train.sum();
        let weighted: f64 = k_train.dot(&self.inv_sqrt_degree);
        PointProfile {
            degree,
            mass: weighted / degree.sqrt(),
            k_train,
        }
    }

    /// Gradients of `d(x)` and `mass(x)` given the point's profile.
    pub(crate) fn profile_gradients(
        &self,
        x: ArrayView1<'_, f64>,
        p: &PointProfile,
    ) -> (Array1<f64>, Array1<f64>) {
        let e = self.eps.value();
        let dim = x.len();
        let mut grad_degree = Array1::<f64>::zeros(dim);
        let mut grad_weighted = Array1::<f64>::zeros(dim);
        let mut weighted = 0.0;
        for ((z, &k), &isd) in self
            .train
            .rows()
            .into_iter()
            .zip(p.k_train.iter())
            .zip(self.inv_sqrt_degree.iter())
        {
            weighted += k * isd;
            for c in 0..dim {
                let g = -(x[c] - z[c]) / e * k;
                grad_degree[c] += g;
                grad_weighted[c] += g * isd;
            }
        }
        // mass = weighted / sqrt(d)
        let sd = p.degree.sqrt();
        let grad_mass = &grad_weighted / sd - &grad_degree * (weighted / (2.0 * p.degree * sd));
        (grad_degree, grad_mass)
    }
}

/// Dense kernel matrices between query sets `X` (rows) and `Y` (columns).
#[derive(Debug, Clone)]
pub struct KernelBundle {
    pub k: Array2<f64>,
    pub m: Array2<f64>,
    pub pf: Array2<f64>,
    pub pb: Array2<f64>,
    pub p: Array2<f64>,
    /// `d(x_i)` against the training set.
    pub d_row: Array1<f64>,
    /// `d(y_j)` against the training set.
    pub d_col: Array1<f64>,
    pub(crate) mass_row: Array1<f64>,
    pub(crate) mass_col: Array1<f64>,
}

/// First-argument gradients, each shaped `n x m x d`.
#[derive(Debug, Clone)]
pub struct KernelGradientBundle {
    pub grad_k: Array3<f64>,
    pub grad_m: Array3<f64>,
    pub grad_pf: Array3<f64>,
    pub grad_pb: Array3<f64>,
    pub grad_p: Array3<f64>,
}

fn check_dims(x: &SampleMatrix, y: &SampleMatrix, train: &SampleMatrix) -> Result<()> {
    x.ensure_same_dim(train, "kernel bundle (X vs train)")?;
    y.ensure_same_dim(train, "kernel bundle (Y vs train)")
}

/// Every kernel of `x` against `y`, normalized with the degrees of `train`.
///
/// Fails with `DegenerateData` when a point is far enough from `train` that
/// its degree underflows; the entries would be 0/0.
pub fn build_kernel_bundle(
    x: &SampleMatrix,
    y: &SampleMatrix,
    train: &SampleMatrix,
    eps: Bandwidth,
) -> Result<KernelBundle> {
    check_dims(x, y, train)?;
    let measure = TrainingMeasure::new(train.clone(), eps);
    let bundle = bundle_with_measure(&measure, x, y);
    if bundle.d_row.iter().chain(bundle.d_col.iter()).any(|&d| d == 0.0) {
        return Err(Error::DegenerateData(
            "a query point is so far from the training data that its degree underflows".into(),
        ));
    }
    Ok(bundle)
}

pub(crate) fn bundle_with_measure(
    measure: &TrainingMeasure,
    x: &SampleMatrix,
    y: &SampleMatrix,
) -> KernelBundle {
    let e = measure.eps().value();
    let rows: Vec<PointProfile> = x.rows().into_iter().map(|r| measure.profile(r)).collect();
    let cols: Vec<PointProfile> = y.rows().into_iter().map(|r| measure.profile(r)).collect();
    let d_row: Array1<f64> = rows.iter().map(|p| p.degree).collect();
    let d_col: Array1<f64> = cols.iter().map(|p| p.degree).collect();
    let mass_row: Array1<f64> = rows.iter().map(|p| p.mass).collect();
    let mass_col: Array1<f64> = cols.iter().map(|p| p.mass).collect();

    let shape = (x.count(), y.count());
    let k = Array2::from_shape_fn(shape, |(i, j)| gauss(sq_dist(x.row(i), y.row(j)), e));
    let m = Array2::from_shape_fn(shape, |(i, j)| k[[i, j]] / (d_row[i] * d_col[j]).sqrt());
    let pf = Array2::from_shape_fn(shape, |(i, j)| m[[i, j]] / mass_col[j]);
    let pb = Array2::from_shape_fn(shape, |(i, j)| m[[i, j]] / mass_row[i]);
    let p = (&pf + &pb) * 0.5;
    KernelBundle {
        k,
        m,
        pf,
        pb,
        p,
        d_row,
        d_col,
        mass_row,
        mass_col,
    }
}

/// Analytic first-argument gradients of every matrix in `bundle`.
///
/// The degree term uses the chain rule
/// `grad sqrt d(x) = (sum_i grad_1 K(x, z_i)) / (2 sqrt d(x))`.
pub fn build_kernel_gradients(
    x: &SampleMatrix,
    y: &SampleMatrix,
    train: &SampleMatrix,
    eps: Bandwidth,
    bundle: &KernelBundle,
) -> Result<KernelGradientBundle> {
    check_dims(x, y, train)?;
    if bundle.k.dim() != (x.count(), y.count()) {
        return Err(Error::invalid("kernel bundle shape does not match X and Y"));
    }
    let measure = TrainingMeasure::new(train.clone(), eps);
    Ok(gradients_with_measure(&measure, x, y, bundle))
}

pub(crate) fn gradients_with_measure(
    measure: &TrainingMeasure,
    x: &SampleMatrix,
    y: &SampleMatrix,
    bundle: &KernelBundle,
) -> KernelGradientBundle {
    let e = measure.eps().value();
    let (n, m) = (x.count(), y.count());
    let dim = x.dim();
    let mut grad_k = Array3::zeros((n, m, dim));
    let mut grad_m = Array3::zeros((n, m, dim));
    let mut grad_pf = Array3::zeros((n, m, dim));
    let mut grad_pb = Array3::zeros((n, m, dim));

    for (i, xi) in x.rows().into_iter().enumerate() {
        let prof = measure.profile(xi);
        let (grad_degree, grad_mass) = measure.profile_gradients(xi, &prof);
        let d_x = bundle.d_row[i];
        let mass_x = bundle.mass_row[i];
        for (j, yj) in y.rows().into_iter().enumerate() {
            let kij = bundle.k[[i, j]];
            let mij = bundle.m[[i, j]];
            let norm = 1.0 / (d_x * bundle.d_col[j]).sqrt();
            for c in 0..dim {
                let gk = -(xi[c] - yj[c]) / e * kij;
                let gm = gk * norm - mij * grad_degree[c] / (2.0 * d_x);
                grad_k[[i, j, c]] = gk;
                grad_m[[i, j, c]] = gm;
                grad_pf[[i, j, c]] = gm / bundle.mass_col[j];
                grad_pb[[i, j, c]] = gm / mass_x - mij * grad_mass[c] / (mass_x * mass_x);
            }
        }
    }
    let grad_p = (&grad_pf + &grad_pb) * 0.5;
    KernelGradientBundle {
        grad_k,
        grad_m,
        grad_pf,
        grad_pb,
        grad_p,
    }
}

/// `P(train, train)` for a training measure, with `mass(z_i)` per training point.
pub(crate) fn training_kernel(measure: &TrainingMeasure) -> (Array2<f64>, Array1<f64>) {
    let train = measure.train();
    let b = bundle_with_measure(measure, train, train);
    // Exact symmetrization; the two triangles differ only by rounding.
    let pt = b.p.t().to_owned();
    ((&b.p + &pt) * 0.5, b.mass_row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> SampleMatrix {
        SampleMatrix::from_column(v).unwrap()
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> SampleMatrix {
        SampleMatrix::new(Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn median_bandwidth_two_points() {
        let eps = median_bandwidth(&col(&[0.0, 1.0])).unwrap();
        assert_relative_eq!(eps.value(), 1.0 / (2.0 * 2f64.ln()), max_relative = 1e-14);
        assert_relative_eq!(eps.value(), 0.72135, epsilon = 1e-5);
    }

    #[test]
    fn median_bandwidth_three_collinear() {
        let eps = median_bandwidth(&col(&[0.0, 1.0, 2.0])).unwrap();
        assert_relative_eq!(eps.value(), 1.0 / (2.0 * 3f64.ln()), max_relative = 1e-14);
        assert_relative_eq!(eps.value(), 0.45512, epsilon = 1e-5);
    }

    #[test]
    fn median_of_even_count_averages_middle_pair() {
        // distances {1, 2, 3, 1, 2, 1} -> sorted {1,1,1,2,2,3}, median 1.5
        let med = median_pairwise_distance(&col(&[0.0, 1.0, 2.0, 3.0])).unwrap();
        assert_relative_eq!(med, 1.5);
    }

    #[test]
    fn median_bandwidth_errors() {
        assert!(matches!(median_bandwidth(&col(&[1.0])), Err(Error::InvalidInput(_))));
        assert!(matches!(
            median_bandwidth(&col(&[2.0, 2.0, 2.0])),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn gaussian_kernel_values() {
        let eps = Bandwidth::new(0.7).unwrap();
        let k = gaussian_kernel(&col(&[0.3]), &col(&[0.3]), eps).unwrap();
        assert_eq!(k[[0, 0]], 1.0);
        // |x - y|^2 = 2 eps
        let k = gaussian_kernel(&col(&[0.0]), &col(&[(1.4f64).sqrt()]), eps).unwrap();
        assert_relative_eq!(k[[0, 0]], (-1f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(k[[0, 0]], 0.36788, epsilon = 1e-5);
    }

    #[test]
    fn gaussian_kernel_swap_transposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_points(&mut rng, 4, 3);
        let y = random_points(&mut rng, 6, 3);
        let eps = Bandwidth::new(0.5).unwrap();
        let kxy = gaussian_kernel(&x, &y, eps).unwrap();
        let kyx = gaussian_kernel(&y, &x, eps).unwrap();
        assert_eq!(kxy.t(), kyx);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let eps = Bandwidth::new(1.0).unwrap();
        let a = SampleMatrix::new(array![[0.0, 1.0]]).unwrap();
        let b = col(&[0.0]);
        assert!(gaussian_kernel(&a, &b, eps).is_err());
        assert!(gaussian_kernel_grad1(&a, &b, eps).is_err());
        assert!(build_kernel_bundle(&a, &a, &b, eps).is_err());
    }

    #[test]
    fn kernel_gradient_values() {
        let eps = Bandwidth::new(1.0).unwrap();
        let g = gaussian_kernel_grad1(&col(&[1.0]), &col(&[0.0]), eps).unwrap();
        assert_relative_eq!(g[[0, 0, 0]], -(-0.5f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(g[[0, 0, 0]], -0.60653, epsilon = 1e-5);
        let g = gaussian_kernel_grad1(&col(&[0.4]), &col(&[0.4]), eps).unwrap();
        assert_eq!(g[[0, 0, 0]], 0.0);
    }

    #[test]
    fn kernel_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let d = rng.random_range(1..=4);
            let x = random_points(&mut rng, 3, d);
            let y = random_points(&mut rng, 4, d);
            let eps = Bandwidth::new(rng.random_range(0.1..1.0)).unwrap();
            let g = gaussian_kernel_grad1(&x, &y, eps).unwrap();
            let h = 1e-5 * eps.value().sqrt();
            for i in 0..3 {
                for c in 0..d {
                    let mut xp = x.as_array().clone();
                    let mut xm = x.as_array().clone();
                    xp[[i, c]] += h;
                    xm[[i, c]] -= h;
                    let kp = gaussian_kernel(&SampleMatrix::new(xp).unwrap(), &y, eps).unwrap();
                    let km = gaussian_kernel(&SampleMatrix::new(xm).unwrap(), &y, eps).unwrap();
                    for j in 0..4 {
                        let fd = (kp[[i, j]] - km[[i, j]]) / (2.0 * h);
                        assert!((fd - g[[i, j, c]]).abs() <= 1e-6 * fd.abs().max(1e-3));
                    }
                }
            }
        }
    }

    #[test]
    fn single_training_point_collapses_to_one() {
        let z = col(&[0.25]);
        let b = build_kernel_bundle(&z, &z, &z, Bandwidth::new(0.3).unwrap()).unwrap();
        assert_relative_eq!(b.p[[0, 0]], 1.0, max_relative = 1e-15);
        let g = build_kernel_gradients(&z, &z, &z, Bandwidth::new(0.3).unwrap(), &b).unwrap();
        for arr in [&g.grad_k, &g.grad_m, &g.grad_pf, &g.grad_pb, &g.grad_p] {
            assert!(arr.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn training_bundle_is_stochastic_and_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = random_points(&mut rng, 15, 2);
        let eps = median_bandwidth(&z).unwrap();
        let b = build_kernel_bundle(&z, &z, &z, eps).unwrap();
        for s in b.pf.sum_axis(Axis(0)).iter() {
            assert!((s - 1.0).abs() < 1e-10);
        }
        for s in b.pb.sum_axis(Axis(1)).iter() {
            assert!((s - 1.0).abs() < 1e-10);
        }
        let pmax = b.p.iter().copied().fold(0.0, f64::max);
        for i in 0..15 {
            for j in 0..15 {
                assert!((b.pf[[i, j]] - b.pb[[j, i]]).abs() < 1e-14);
                assert!((b.p[[i, j]] - b.p[[j, i]]).abs() <= 1e-12 * pmax);
            }
        }
        assert!(b.k.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn reflected_pair_gives_opposite_gradients() {
        let a = 0.7;
        let train = col(&[-a, a]);
        let q = col(&[0.0]);
        let eps = Bandwidth::new(0.4).unwrap();
        let b = build_kernel_bundle(&q, &train, &train, eps).unwrap();
        let g = build_kernel_gradients(&q, &train, &train, eps, &b).unwrap();
        assert_relative_eq!(g.grad_p[[0, 0, 0]], -g.grad_p[[0, 1, 0]], max_relative = 1e-12);
        assert!(g.grad_p[[0, 0, 0]].abs() > 0.0);
    }

    #[test]
    fn shrinking_bandwidth_decreases_off_diagonal_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = random_points(&mut rng, 10, 3);
        let k1 = gaussian_kernel(&z, &z, Bandwidth::new(0.5).unwrap()).unwrap();
        let k2 = gaussian_kernel(&z, &z, Bandwidth::new(0.05).unwrap()).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                if i != j {
                    assert!(k2[[i, j]] < k1[[i, j]]);
                }
            }
        }
    }
}
