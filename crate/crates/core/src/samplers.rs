//! Particle samplers: the diffusion map particle system (DMPS) and the SVGD
//! and ULA baselines driven by a score function.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::InitPolicy;
use crate::error::{Error, Result};
use crate::kernel::median_pairwise_distance;
use crate::model::DiffusionModel;
use crate::sample::SampleMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop once the mean per-particle step length falls below this. `None`
    /// means `1e-4 sqrt(eps)` for DMPS and never for the baselines.
    pub tol: Option<f64>,
    pub seed: u64,
    pub init: InitPolicy,
    /// Record every this many iterations; `None` keeps only the first and last state.
    pub snapshot_every: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            step_size: 0.1,
            max_iters: 1000,
            tol: None,
            seed: 0,
            init: InitPolicy::SubsampleJitter,
            snapshot_every: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid(format!("step size must be positive, got {}", self.step_size)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if let Some(t) = self.tol {
            if t.is_nan() || t < 0.0 {
                return Err(Error::invalid("tol must be nonnegative"));
            }
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::invalid("snapshot_every must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<(usize, SampleMatrix)>,
    pub converged: bool,
    pub iters_run: usize,
}

impl Trajectory {
    pub fn last(&self) -> &SampleMatrix {
        &self.snapshots.last().expect("trajectory is nonempty").1
    }

    pub fn into_last(mut self) -> SampleMatrix {
        self.snapshots.pop().expect("trajectory is nonempty").1
    }

    /// Columns `iter, particle_id, x_0, ..`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let fmt = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(fmt)?;
        let d = self.last().dim();
        let mut header = vec!["iter".to_string(), "particle_id".to_string()];
        header.extend((0..d).map(|j| format!("x_{j}")));
        w.write_record(&header).map_err(fmt)?;
        for (it, x) in &self.snapshots {
            for (i, row) in x.rows().into_iter().enumerate() {
                let mut rec = vec![it.to_string(), i.to_string()];
                rec.extend(row.iter().map(|v| format!("{v:?}")));
                w.write_record(&rec).map_err(fmt)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

struct Recorder {
    every: Option<usize>,
    snapshots: Vec<(usize, SampleMatrix)>,
}

impl Recorder {
    fn new(every: Option<usize>, init: &SampleMatrix) -> Self {
        Recorder {
            every,
            snapshots: vec![(0, init.clone())],
        }
    }

    fn step(&mut self, iter: usize, x: &Array2<f64>) -> Result<()> {
        if let Some(e) = self.every {
            if iter % e == 0 {
                self.snapshots.push((iter, SampleMatrix::new(x.clone())?));
            }
        }
        Ok(())
    }

    fn finish(mut self, iter: usize, x: Array2<f64>, converged: bool) -> Result<Trajectory> {
        if self.snapshots.last().map(|s| s.0) != Some(iter) {
            self.snapshots.push((iter, SampleMatrix::new(x)?));
        }
        Ok(Trajectory {
            snapshots: self.snapshots,
            converged,
            iters_run: iter,
        })
    }
}

fn mean_step_length(step: &Array2<f64>) -> f64 {
    step.rows().into_iter().map(|r| r.dot(&r).sqrt()).sum::<f64>() / step.nrows() as f64
}

fn check_finite(a: &Array2<f64>, iteration: usize) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { iteration })
    }
}

/// Deterministic DMPS iteration `x <- x - h * drift_field(x)`.
pub fn dmps_run(model: &DiffusionModel, init: &SampleMatrix, cfg: &SamplerConfig) -> Result<Trajectory> {
    cfg.validate()?;
    init.ensure_same_dim(model.train(), "particles vs training data")?;
    let tol = cfg.tol.unwrap_or(1e-4 * model.eps().value().sqrt());
    let h = cfg.step_size;
    let mut rec = Recorder::new(cfg.snapshot_every, init);
    let mut x = init.as_array().clone();
    for it in 1..=cfg.max_iters {
        let drift = model.drift_field(&SampleMatrix::new(x.clone()).map_err(|_| Error::Divergence { iteration: it - 1 })?)?;
        check_finite(&drift, it)?;
        let step = drift * h;
        x -= &step;
        rec.step(it, &x)?;
        if mean_step_length(&step) < tol {
            return rec.finish(it, x, true);
        }
    }
    rec.finish(cfg.max_iters, x, false)
}

/// Learned score at the training points.
pub fn estimate_score(model: &DiffusionModel) -> Array2<f64> {
    model.estimate_score()
}

/// Bandwidth for SVGD's interaction kernel from the current particles:
/// `med^2 / (2 ln M)`, falling back to 1 when it is undefined.
pub fn svgd_bandwidth(x: &SampleMatrix) -> f64 {
    if x.count() < 2 {
        return 1.0;
    }
    match median_pairwise_distance(x) {
        Ok(med) if med > 0.0 => med * med / (2.0 * (x.count() as f64).ln()),
        _ => 1.0,
    }
}

/// `(1/M) sum_j [K(x_j, x_i) s(x_j) + grad_{x_j} K(x_j, x_i)]`.
pub fn svgd_direction(x: &SampleMatrix, score: &Array2<f64>, eps: f64) -> Array2<f64> {
    let (m, d) = (x.count(), x.dim());
    let mut out = Array2::<f64>::zeros((m, d));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let xi = x.row(i);
            for j in 0..m {
                let xj = x.row(j);
                let mut sq = 0.0;
                for c in 0..d {
                    sq += (xj[c] - xi[c]) * (xj[c] - xi[c]);
                }
                let k = (-sq / (2.0 * eps)).exp();
                for c in 0..d {
                    row[c] += k * (score[[j, c]] - (xj[c] - xi[c]) / eps);
                }
            }
            row /= m as f64;
        });
    out
}

/// Stein variational gradient descent with a per-iteration median bandwidth.
pub fn svgd_run<F>(score: F, init: &SampleMatrix, cfg: &SamplerConfig) -> Result<Trajectory>
where
    F: Fn(&SampleMatrix) -> Result<Array2<f64>>,
{
    cfg.validate()?;
    let tol = cfg.tol.unwrap_or(0.0);
    let h = cfg.step_size;
    let mut rec = Recorder::new(cfg.snapshot_every, init);
    let mut x = init.clone();
    for it in 1..=cfg.max_iters {
        let s = score(&x)?;
        check_finite(&s, it)?;
        let step = svgd_direction(&x, &s, svgd_bandwidth(&x)) * h;
        check_finite(&step, it)?;
        let next = x.as_array() + &step;
        rec.step(it, &next)?;
        x = SampleMatrix::new(next).map_err(|_| Error::Divergence { iteration: it })?;
        if mean_step_length(&step) < tol {
            return rec.finish(it, x.into_inner(), true);
        }
    }
    rec.finish(cfg.max_iters, x.into_inner(), false)
}

/// Unadjusted Langevin: `x <- x + h s(x) + sqrt(2h) xi` for exactly `max_iters` steps.
///
/// Particle `i` draws its noise from ChaCha stream `i` of `cfg.seed`, so
/// results do not depend on thread scheduling.
pub fn ula_run<F>(score: F, init: &SampleMatrix, cfg: &SamplerConfig) -> Result<Trajectory>
where
    F: Fn(&SampleMatrix) -> Result<Array2<f64>>,
{
    cfg.validate()?;
    let h = cfg.step_size;
    let noise = (2.0 * h).sqrt();
    let mut rngs: Vec<ChaCha8Rng> = (0..init.count())
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(i as u64);
            r
        })
        .collect();
    let mut rec = Recorder::new(cfg.snapshot_every, init);
    let mut x = init.clone();
    for it in 1..=cfg.max_iters {
        let s = score(&x)?;
        check_finite(&s, it)?;
        let mut next = x.into_inner();
        next.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(rngs.par_iter_mut())
            .enumerate()
            .for_each(|(i, (mut row, rng))| {
                for (c, v) in row.iter_mut().enumerate() {
                    let xi: f64 = StandardNormal.sample(rng);
                    *v += h * s[[i, c]] + noise * xi;
                }
            });
        rec.step(it, &next)?;
        x = SampleMatrix::new(next).map_err(|_| Error::Divergence { iteration: it })?;
    }
    rec.finish(cfg.max_iters, x.into_inner(), false)
}
