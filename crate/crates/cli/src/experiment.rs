//! Batch runs: fresh data per trial, fit, sample, evaluate.

use std::fs;
use std::path::Path;
use std::time::Instant;

use dmps::datasets::{gluon_split, init_particles, write_csv, DatasetSpec};
use dmps::eval::sinkhorn_distance;
use dmps::samplers::{dmps_run, svgd_run, ula_run, SamplerConfig, Trajectory};
use dmps::seed::{self, derive};
use dmps::{DiffusionModel, Error, Result, SampleMatrix};
use serde::{Deserialize, Serialize};

use crate::config::{sampler_seed, ExperimentConfig, SamplerKind};
use crate::summary::emit_summary;

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub sampler: String,
    pub n_train: usize,
    pub m_particles: usize,
    pub trial: usize,
    /// Empty for failed runs.
    pub ot_cost: Option<f64>,
    pub iters: Option<usize>,
    /// Model fit plus sampling time.
    pub wall_time_seconds: f64,
    /// `ok`, or the error that aborted the run.
    pub status: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Training and reference draws for one trial.
pub fn trial_data(cfg: &ExperimentConfig, trial: usize) -> Result<(SampleMatrix, SampleMatrix)> {
    let t = trial as u64;
    match &cfg.dataset {
        DatasetSpec::Gluon { path, particle_index, jets } => {
            let (train, reference, _) = gluon_split(
                path,
                *particle_index,
                cfg.n_train,
                cfg.n_reference,
                derive(cfg.master_seed, &[t, seed::TRAIN]),
                *jets,
            )?;
            Ok((train, reference))
        }
        spec => Ok((
            spec.generate(cfg.n_train, derive(cfg.master_seed, &[t, seed::TRAIN]))?,
            spec.generate(cfg.n_reference, derive(cfg.master_seed, &[t, seed::REFERENCE]))?,
        )),
    }
}

/// Runs one sampler from `init`. Baselines use the model's learned score.
pub fn run_sampler(
    kind: SamplerKind,
    model: &DiffusionModel,
    init: &SampleMatrix,
    cfg: &SamplerConfig,
) -> Result<Trajectory> {
    let score = |x: &SampleMatrix| model.score_at(x);
    match kind {
        SamplerKind::Dmps => dmps_run(model, init, cfg),
        SamplerKind::Svgd => svgd_run(score, init, cfg),
        SamplerKind::Ula => ula_run(score, init, cfg),
    }
}

struct TrialState {
    model: DiffusionModel,
    train: SampleMatrix,
    reference: SampleMatrix,
    fit_seconds: f64,
}

fn prepare_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialState> {
    let (train, reference) = trial_data(cfg, trial)?;
    let start = Instant::now();
    let model = DiffusionModel::fit(train.clone(), cfg.fit.options()?)?;
    Ok(TrialState {
        model,
        train,
        reference,
        fit_seconds: start.elapsed().as_secs_f64(),
    })
}

fn one_line(e: &Error) -> String {
    format!("error: {e}").replace(['\n', '\r'], " ")
}

/// One (trial, particle count, sampler) cell. Returns the row and, on
/// success, the final particles.
pub fn run_trial_cell(
    cfg: &ExperimentConfig,
    trial: usize,
    m: usize,
    kind: SamplerKind,
    model: &DiffusionModel,
    train: &SampleMatrix,
    reference: &SampleMatrix,
) -> (ResultRow, Option<SampleMatrix>) {
    let mut row = ResultRow {
        dataset: cfg.dataset.label(),
        sampler: kind.name().into(),
        n_train: cfg.n_train,
        m_particles: m,
        trial,
        ot_cost: None,
        iters: None,
        wall_time_seconds: 0.0,
        status: "ok".into(),
    };
    let init_seed = derive(cfg.master_seed, &[trial as u64, seed::INIT, m as u64]);
    let run = || -> Result<(Trajectory, f64)> {
        let init = init_particles(&cfg.init, m, train.dim(), init_seed, Some(train), Some(model.eps()))?;
        let scfg = SamplerConfig {
            seed: sampler_seed(cfg.master_seed, trial, m, kind),
            ..cfg.sampler(kind).clone()
        };
        let start = Instant::now();
        let traj = run_sampler(kind, model, &init, &scfg)?;
        Ok((traj, start.elapsed().as_secs_f64()))
    };
    match run().and_then(|(traj, secs)| {
        let report = sinkhorn_distance(traj.last(), reference, &cfg.ot)?;
        Ok((traj, secs, report))
    }) {
        Ok((traj, secs, report)) => {
            row.ot_cost = Some(report.cost);
            row.iters = Some(traj.iters_run);
            row.wall_time_seconds = secs;
            (row, Some(traj.into_last()))
        }
        Err(e) => {
            row.status = one_line(&e);
            (row, None)
        }
    }
}

/// Runs every trial, writing the manifest, `results.csv`, the summary and
/// (optionally) final particles under `cfg.output_dir`.
///
/// A failing trial or cell yields failure rows; the remaining work continues.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = format!(
        "# dmps {} experiment manifest; rerun with `dmps experiment --config {MANIFEST_FILE}`\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.to_toml()?
    );
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;

    let ms = cfg.particle_counts();
    let mut rows = Vec::new();
    for trial in 0..cfg.trials {
        match prepare_trial(cfg, trial) {
            Ok(state) => {
                for &m in &ms {
                    for &kind in &cfg.samplers {
                        let (mut row, particles) =
                            run_trial_cell(cfg, trial, m, kind, &state.model, &state.train, &state.reference);
                        row.wall_time_seconds += state.fit_seconds;
                        if let (true, Some(p)) = (cfg.save_particles, particles) {
                            let pdir = dir.join("particles");
                            fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
                            write_csv(&pdir.join(format!("{}_m{m}_trial{trial}.csv", kind.name())), &p)?;
                        }
                        rows.push(row);
                    }
                }
            }
            Err(e) => {
                for &m in &ms {
                    for &kind in &cfg.samplers {
                        rows.push(ResultRow {
                            dataset: cfg.dataset.label(),
                            sampler: kind.name().into(),
                            n_train: cfg.n_train,
                            m_particles: m,
                            trial,
                            ot_cost: None,
                            iters: None,
                            wall_time_seconds: 0.0,
                            status: one_line(&e),
                        });
                    }
                }
            }
        }
    }
    write_results(&dir.join(RESULTS_FILE), &rows)?;
    emit_summary(&rows, dir)?;
    Ok(rows)
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let fmt = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fmt)?;
    for r in rows {
        w.serialize(r).map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let fmt = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(fmt)?;
    r.deserialize().map(|row| row.map_err(fmt)).collect()
}
