//! Fitted diffusion-map model: the training measure, its spectrum, and the
//! cached middle factor `Phi diag(w) Phi^T` of the inverse-generator kernel.
//!
//! The drift on a particle ensemble `x_1..x_M` is
//!
//! ```text
//! drift_i = (1/M) sum_j sum_{k1,k2} grad_1 P(x_i, z_k1) C[k1, k2] P(z_k2, x_j)
//! ```
//!
//! Summing over `j` first collapses the right factor to a length-`N` vector,
//! so one evaluation costs `O(M N d + N^2)`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array1, Array2, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{median_bandwidth, training_kernel, Bandwidth, TrainingMeasure};
use crate::sample::{sq_dist, SampleMatrix};
use crate::spectral::{
    eigendecompose, inverse_spectrum, InverseSpectrum, Spectrum, DEFAULT_LAMBDA_MIN,
    DEFAULT_SIGMA_MIN_SCALED,
};

pub const MODEL_FORMAT: &str = "dmps-model";
pub const MODEL_VERSION: u32 = 1;

/// Options for [`DiffusionModel::fit`].
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct FitOptions {
    /// Kernel bandwidth; the median heuristic when absent.
    pub bandwidth: Option<Bandwidth>,
    /// Smallest retained generator eigenvalue; `1e-8 / eps` when absent.
    pub sigma_min: Option<f64>,
    /// Smallest retained kernel eigenvalue; `1e-10` when absent.
    pub lambda_min: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DiffusionModel {
    measure: TrainingMeasure,
    /// `mass(z_k) = sum_i M(z_k, z_i)`
    mass_train: Array1<f64>,
    spectrum: Spectrum,
    inverse: InverseSpectrum,
    middle: Array2<f64>,
}

/// Kernel rows of a query set against the training points.
fn centered_score(p: &Array2<f64>, train: &SampleMatrix, x: &SampleMatrix, eps: f64) -> Array2<f64> {
    let mean = p.dot(train.as_array());
    let mass = p.sum_axis(Axis(1)).insert_axis(Axis(1));
    (mean - x.as_array() * &mass) * (2.0 / eps)
}

/// Kernel rows of query points against the training set. Each row is scaled
/// by `exp(shift)` so that its largest entry is 1; `half_scale` holds
/// `exp(-shift / 2)`, the factor that restores the terms not invariant under
/// that scaling. Far from the data the true degrees underflow.
struct QueryRows {
    k: Array2<f64>,
    degree: Array1<f64>,
    mass: Array1<f64>,
    half_scale: Array1<f64>,
}

impl DiffusionModel {
    pub fn fit(train: SampleMatrix, opts: FitOptions) -> Result<Self> {
        let eps = match opts.bandwidth {
            Some(b) => b,
            None => median_bandwidth(&train)?,
        };
        let sigma_min = opts
            .sigma_min
            .unwrap_or(DEFAULT_SIGMA_MIN_SCALED / eps.value());
        let lambda_min = opts.lambda_min.unwrap_or(DEFAULT_LAMBDA_MIN);

        let measure = TrainingMeasure::new(train, eps);
        let (p_train, mass_train) = training_kernel(&measure);
        let spectrum = eigendecompose(&p_train, eps)?;
        let inverse = inverse_spectrum(&spectrum, sigma_min, lambda_min)?;
        let middle = middle_factor(&spectrum, &inverse);
        Ok(DiffusionModel {
            measure,
            mass_train,
            spectrum,
            inverse,
            middle,
        })
    }

    pub fn train(&self) -> &SampleMatrix {
        self.measure.train()
    }

    pub fn eps(&self) -> Bandwidth {
        self.measure.eps()
    }

    pub fn dim(&self) -> usize {
        self.train().dim()
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn inverse(&self) -> &InverseSpectrum {
        &self.inverse
    }

    /// `Phi diag(w) Phi^T`, `N x N`.
    pub fn middle_factor(&self) -> &Array2<f64> {
        &self.middle
    }

    /// Exact `P(train, train)`, recomputed from the training set.
    pub fn training_kernel(&self) -> Array2<f64> {
        training_kernel(&self.measure).0
    }

    /// `(f - P f) / eps` on the training points, with the exact kernel matrix.
    pub fn apply_generator(&self, f_train: &Array1<f64>) -> Result<Array1<f64>> {
        if f_train.len() != self.train().count() {
            return Err(Error::invalid("function length must equal the training count"));
        }
        let p = self.training_kernel();
        Ok((f_train - &p.dot(f_train)) / self.eps().value())
    }

    fn check_dim(&self, x: &SampleMatrix) -> Result<()> {
        x.ensure_same_dim(self.train(), "query points vs training data")
    }

    fn query_rows(&self, x: &SampleMatrix) -> QueryRows {
        let e = self.eps().value();
        let train = self.train();
        let isd = self.measure.inv_sqrt_degree();
        let n = train.count();
        let mut k = Array2::<f64>::zeros((x.count(), n));
        let mut degree = Array1::<f64>::zeros(x.count());
        let mut mass = Array1::<f64>::zeros(x.count());
        let mut half_scale = Array1::<f64>::zeros(x.count());
        Zip::from(k.rows_mut())
            .and(x.as_array().rows())
            .and(&mut degree)
            .and(&mut mass)
            .and(&mut half_scale)
            .par_for_each(|mut krow, xi, deg, ms, hs| {
                let mut shift = f64::INFINITY;
                for (kk, z) in krow.iter_mut().zip(train.rows()) {
                    *kk = sq_dist(xi, z) / (2.0 * e);
                    shift = shift.min(*kk);
                }
                let mut d = 0.0;
                let mut w = 0.0;
                for (kk, s) in krow.iter_mut().zip(isd.iter()) {
                    *kk = (shift - *kk).exp();
                    d += *kk;
                    w += *kk * s;
                }
                *deg = d;
                *ms = w / d.sqrt();
                *hs = (-0.5 * shift).exp();
            });
        QueryRows { k, degree, mass, half_scale }
    }

    /// `P(x_i, z_k)` from precomputed kernel rows.
    fn p_rows(&self, q: &QueryRows) -> Array2<f64> {
        let isd = self.measure.inv_sqrt_degree();
        let mut p = q.k.clone();
        Zip::from(p.rows_mut())
            .and(&q.degree)
            .and(&q.mass)
            .and(&q.half_scale)
            .par_for_each(|mut row, &d, &ms, &hs| {
                let inv_sd = 1.0 / d.sqrt();
                for ((v, &s), &mk) in row.iter_mut().zip(isd.iter()).zip(self.mass_train.iter()) {
                    let m = *v * s * inv_sd;
                    *v = 0.5 * m * (1.0 / ms + hs / mk);
                }
            });
        p
    }

    /// `P(x_i, z_k)` for every query row, `M x N`.
    pub fn query_kernel(&self, x: &SampleMatrix) -> Result<Array2<f64>> {
        self.check_dim(x)?;
        Ok(self.p_rows(&self.query_rows(x)))
    }

    /// Mean inverse-generator kernel gradient over the ensemble, one row per particle:
    /// `(1/M) sum_j grad_1 K_inv(x_i, x_j)`.
    pub fn drift_field(&self, particles: &SampleMatrix) -> Result<Array2<f64>> {
        self.check_dim(particles)?;
        let q = self.query_rows(particles);
        let p = self.p_rows(&q);
        let s = p.sum_axis(Axis(0));
        let v = self.middle.dot(&s);

        let e = self.eps().value();
        let dim = self.dim();
        let train = self.train();
        let isd = self.measure.inv_sqrt_degree();
        let inv_m = 1.0 / particles.count() as f64;

        let mut out = Array2::<f64>::zeros((particles.count(), dim));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut row)| {
                let xi = particles.row(i);
                let d = q.degree[i];
                let sd = d.sqrt();
                let hs = q.half_scale[i];
                let inv_mass_x = 1.0 / q.mass[i];

                // P(x, z_k) v_k splits into M_k v_k / mass(x), invariant under
                // the row scaling, and M_k v_k / mass_k, which carries `hs`.
                let mut grad_d = vec![0.0; dim];
                let mut grad_w = vec![0.0; dim];
                let mut grad_kv = vec![0.0; dim];
                let mut grad_kvm = vec![0.0; dim];
                let mut mv = 0.0;
                let mut mvm = 0.0;
                let mut w = 0.0;
                for (kidx, z) in train.rows().into_iter().enumerate() {
                    let kk = q.k[[i, kidx]];
                    if kk == 0.0 {
                        continue;
                    }
                    let s = isd[kidx];
                    let vk = v[kidx];
                    let vm = vk / self.mass_train[kidx];
                    let m = kk * s / sd;
                    w += kk * s;
                    mv += m * vk;
                    mvm += m * vm;
                    for c in 0..dim {
                        let g = -(xi[c] - z[c]) / e * kk * s;
                        grad_d[c] += g / s;
                        grad_w[c] += g;
                        grad_kv[c] += g * vk;
                        grad_kvm[c] += g * vm;
                    }
                }
                for c in 0..dim {
                    let grad_mass = grad_w[c] / sd - w * grad_d[c] / (2.0 * d * sd);
                    // sum_k grad M(x, z_k) times v_k and v_k / mass_k
                    let gmv = grad_kv[c] / sd - grad_d[c] / (2.0 * d) * mv;
                    let gmvm = grad_kvm[c] / sd - grad_d[c] / (2.0 * d) * mvm;
                    let invariant = (gmv - grad_mass * mv * inv_mass_x) * inv_mass_x;
                    row[c] = 0.5 * (invariant + hs * gmvm) * inv_m;
                }
            });
        Ok(out)
    }

    /// Learned score `grad log pi` at arbitrary points:
    /// `2 sum_k P(x, z_k) (z_k - x) / eps`.
    ///
    /// This is minus twice the generator applied to the coordinates centered
    /// at `x`, so it moves with the data under translations even where the
    /// rows of `P` do not sum to one. The factor 2 converts the kernel's
    /// diffusion time: a Gaussian of variance `eps` advances the Langevin
    /// process by `eps / 2`.
    pub fn score_at(&self, queries: &SampleMatrix) -> Result<Array2<f64>> {
        self.check_dim(queries)?;
        let p = self.query_kernel(queries)?;
        Ok(centered_score(&p, self.train(), queries, self.eps().value()))
    }

    /// Learned score at the training points; see [`DiffusionModel::score_at`].
    pub fn estimate_score(&self) -> Array2<f64> {
        let p = self.training_kernel();
        centered_score(&p, self.train(), self.train(), self.eps().value())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let artifact = ModelArtifact {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            train: self.train().clone(),
            epsilon: self.eps(),
            lambdas: self.spectrum.lambdas.clone(),
            phis: self.spectrum.phis.clone(),
            kept: self.inverse.kept.clone(),
            weights: self.inverse.weights.clone(),
            middle: self.middle.clone(),
        };
        serde_json::to_writer(BufWriter::new(file), &artifact)
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let a: ModelArtifact = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Self::from_artifact(a)
    }

    fn from_artifact(a: ModelArtifact) -> Result<Self> {
        if a.format != MODEL_FORMAT {
            return Err(Error::Format(format!("unexpected model format {:?}", a.format)));
        }
        if a.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                a.version
            )));
        }
        let n = a.train.count();
        if a.lambdas.len() != n
            || a.phis.dim() != (n, n)
            || a.weights.len() != n
            || a.middle.dim() != (n, n)
            || a.kept.iter().any(|&k| k >= n)
        {
            return Err(Error::Format("model arrays do not match the training count".into()));
        }
        let measure = TrainingMeasure::new(a.train, a.epsilon);
        let (_, mass_train) = training_kernel(&measure);
        Ok(DiffusionModel {
            measure,
            mass_train,
            spectrum: Spectrum {
                lambdas: a.lambdas,
                phis: a.phis,
                epsilon: a.epsilon,
            },
            inverse: InverseSpectrum {
                weights: a.weights,
                kept: a.kept,
            },
            middle: a.middle,
        })
    }
}

fn middle_factor(spec: &Spectrum, inv: &InverseSpectrum) -> Array2<f64> {
    let kept = &inv.kept;
    let n = spec.len();
    // Only retained columns contribute.
    let mut left = Array2::<f64>::zeros((n, kept.len()));
    let mut right = Array2::<f64>::zeros((n, kept.len()));
    for (c, &k) in kept.iter().enumerate() {
        let col = spec.phis.column(k);
        left.column_mut(c).assign(&(&col * inv.weights[k]));
        right.column_mut(c).assign(&col);
    }
    let m = left.dot(&right.t());
    let mt = m.t().to_owned();
    (&m + &mt) * 0.5
}

#[derive(Serialize, Deserialize)]
struct ModelArtifact {
    format: String,
    version: u32,
    train: SampleMatrix,
    epsilon: Bandwidth,
    lambdas: Array1<f64>,
    phis: Array2<f64>,
    kept: Vec<usize>,
    weights: Array1<f64>,
    middle: Array2<f64>,
}
