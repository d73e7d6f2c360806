//! Eigendecomposition of the symmetric training kernel and the truncated
//! inverse spectrum of the generator `(I - P) / eps`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Bandwidth;

/// Tolerance used to snap eigenvalues onto `[0, 1]`.
pub const CLAMP_TOL: f64 = 1e-8;
/// Default threshold below which a mode counts as numerically negligible.
pub const DEFAULT_LAMBDA_MIN: f64 = 1e-10;
/// `sigma_min` defaults to this value divided by `eps`, i.e. modes with
/// `1 - lambda < 1e-8` are treated as constant.
pub const DEFAULT_SIGMA_MIN_SCALED: f64 = 1e-8;

/// Eigenpairs of `P` on the training points, sorted by decreasing eigenvalue.
///
/// Eigenvectors are orthonormal under the plain (unweighted) sum over
/// training points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Spectrum {
    pub lambdas: Array1<f64>,
    /// Column `i` holds eigenvector `i`.
    pub phis: Array2<f64>,
    pub epsilon: Bandwidth,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Generator eigenvalues `sigma_i = (1 - lambda_i) / eps`.
    pub fn sigmas(&self) -> Array1<f64> {
        let e = self.epsilon.value();
        self.lambdas.mapv(|l| (1.0 - l) / e)
    }

    /// `sum_i lambda_i phi_i phi_i^T`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let scaled = &self.phis * &self.lambdas;
        scaled.dot(&self.phis.t())
    }
}

/// Full symmetric eigendecomposition of the training kernel.
pub fn eigendecompose(p_train: &Array2<f64>, eps: Bandwidth) -> Result<Spectrum> {
    let (n, m) = p_train.dim();
    if n != m || n == 0 {
        return Err(Error::invalid(format!("kernel matrix must be square, got {n}x{m}")));
    }
    if p_train.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("kernel matrix has non-finite entries"));
    }
    let scale = p_train.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for i in 0..n {
        for j in (i + 1)..n {
            if (p_train[[i, j]] - p_train[[j, i]]).abs() > 1e-10 * scale {
                return Err(Error::invalid(format!(
                    "kernel matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }

    let mat = faer::Mat::<f64>::from_fn(n, n, |i, j| p_train[[i, j]]);
    let evd = mat
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let values = evd.S().column_vector();
    let vectors = evd.U();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));

    let lambdas: Array1<f64> = order
        .iter()
        .map(|&k| {
            let l = values[k];
            if l < 0.0 {
                0.0
            } else if l > 1.0 && l <= 1.0 + CLAMP_TOL {
                1.0
            } else {
                l
            }
        })
        .collect();
    let phis = Array2::from_shape_fn((n, n), |(i, j)| vectors[(i, order[j])]);
    Ok(Spectrum {
        lambdas,
        phis,
        epsilon: eps,
    })
}

/// `w_i = lambda_i^-1 sigma_i^-1 lambda_i^-1` on retained modes, zero elsewhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InverseSpectrum {
    pub weights: Array1<f64>,
    pub kept: Vec<usize>,
}

impl InverseSpectrum {
    /// Truncated inverse generator `Phi diag(lambda^2 w) Phi^T` applied to `g`.
    pub fn apply_inverse(&self, spec: &Spectrum, g: &Array1<f64>) -> Array1<f64> {
        let coeffs = spec.phis.t().dot(g);
        let scaled = Array1::from_shape_fn(coeffs.len(), |i| {
            let l = spec.lambdas[i];
            coeffs[i] * l * self.weights[i] * l
        });
        spec.phis.dot(&scaled)
    }

    /// Orthogonal projector onto the retained modes, applied to `g`.
    pub fn project(&self, spec: &Spectrum, g: &Array1<f64>) -> Array1<f64> {
        let coeffs = spec.phis.t().dot(g);
        let mut masked = Array1::zeros(coeffs.len());
        for &k in &self.kept {
            masked[k] = coeffs[k];
        }
        spec.phis.dot(&masked)
    }
}

/// Inverts the generator spectrum, dropping near-constant modes
/// (`sigma_i < sigma_min`) and negligible Mercer modes (`lambda_i < lambda_min`).
pub fn inverse_spectrum(spec: &Spectrum, sigma_min: f64, lambda_min: f64) -> Result<InverseSpectrum> {
    if !(sigma_min > 0.0 && lambda_min > 0.0) {
        return Err(Error::invalid("sigma_min and lambda_min must be positive"));
    }
    let e = spec.epsilon.value();
    let mut weights = Array1::zeros(spec.len());
    let mut kept = Vec::new();
    for (i, &l) in spec.lambdas.iter().enumerate() {
        let sigma = (1.0 - l) / e;
        if sigma < sigma_min || l < lambda_min {
            continue;
        }
        weights[i] = e / ((1.0 - l) * l * l);
        kept.push(i);
    }
    if kept.is_empty() {
        return Err(Error::DegenerateSpectrum(spec.len()));
    }
    Ok(InverseSpectrum { weights, kept })
}

/// `(f - P f) / eps` with `P` taken from its eigendecomposition.
pub fn apply_generator(spec: &Spectrum, f_train: &Array1<f64>) -> Result<Array1<f64>> {
    if f_train.len() != spec.len() {
        return Err(Error::invalid(format!(
            "function has {} values but the spectrum has {} points",
            f_train.len(),
            spec.len()
        )));
    }
    if f_train.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("function values must be finite"));
    }
    let coeffs = spec.phis.t().dot(f_train) * &spec.lambdas;
    let pf = spec.phis.dot(&coeffs);
    Ok((f_train - &pf) / spec.epsilon.value())
}
