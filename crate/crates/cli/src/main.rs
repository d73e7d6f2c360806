use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dmps::datasets::{init_particles, read_csv, write_csv, DatasetSpec};
use dmps::eval::{sinkhorn_distance, OTConfig};
use dmps::kernel::Bandwidth;
use dmps::samplers::SamplerConfig;
use dmps::{DiffusionModel, Error, FitOptions, InitPolicy, Result};
use dmps_cli::config::{ExperimentConfig, SamplerKind};
use dmps_cli::experiment::{read_results, run_experiment, run_sampler};
use dmps_cli::summary::{emit_summary, format_table};

#[derive(Parser)]
#[command(name = "dmps", version, about = "Diffusion map particle systems and baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetName {
    Mickey,
    TwoMoons,
    Arc,
    Hypersemisphere,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Dmps,
    Svgd,
    Ula,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    SubsampleJitter,
    UniformBox,
}

#[derive(Subcommand)]
enum Command {
    /// Draw samples from a synthetic dataset and write them as CSV.
    GenerateData {
        #[arg(long, value_enum)]
        dataset: DatasetName,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Ambient dimension (hypersemisphere only).
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a diffusion model to training samples.
    Fit {
        #[arg(long)]
        train: PathBuf,
        /// Kernel bandwidth; median heuristic when omitted.
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long)]
        sigma_min: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        lambda_min: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a sampler with a fitted model and write its trajectory.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        sampler: SamplerArg,
        /// Number of particles (ignored with --init-file).
        #[arg(long, default_value_t = 300)]
        m: usize,
        /// Defaults to 0.05 N for dmps (N training points), 0.05 for svgd, 1e-3 for ula.
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = InitArg::SubsampleJitter)]
        init: InitArg,
        #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
        lo: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        hi: f64,
        /// Start from these particles instead.
        #[arg(long)]
        init_file: Option<PathBuf>,
        #[arg(long)]
        snapshot_every: Option<usize>,
        /// Trajectory CSV (iter, particle_id, x_0, ..).
        #[arg(long)]
        out: PathBuf,
        /// Also write the final particles as plain CSV.
        #[arg(long)]
        final_out: Option<PathBuf>,
    },
    /// Entropic OT cost between two point sets.
    Evaluate {
        #[arg(long)]
        particles: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = OTConfig::default().reg)]
        reg: f64,
        #[arg(long, default_value_t = OTConfig::default().max_iters)]
        max_iters: usize,
        #[arg(long, default_value_t = OTConfig::default().marginal_tol)]
        marginal_tol: f64,
        /// Squared Euclidean ground cost.
        #[arg(long)]
        squared: bool,
        /// Write the report as JSON here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a configured batch experiment.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        master_seed: Option<u64>,
    },
    /// Summarize a results CSV.
    Summarize {
        #[arg(long)]
        results: PathBuf,
        /// Where to write summary.csv and summary.txt; next to the results by default.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn dataset_spec(name: DatasetName, dim: usize) -> DatasetSpec {
    match name {
        DatasetName::Mickey => DatasetSpec::Mickey { params: Default::default() },
        DatasetName::TwoMoons => DatasetSpec::TwoMoons { params: Default::default() },
        DatasetName::Arc => DatasetSpec::Arc { params: Default::default() },
        DatasetName::Hypersemisphere => DatasetSpec::Hypersemisphere { d: dim },
    }
}

const DMPS_STEP_PER_POINT: f64 = 0.05;

fn default_sampler(kind: SamplerKind) -> SamplerConfig {
    match kind {
        SamplerKind::Dmps => dmps_cli::config::default_dmps(),
        SamplerKind::Svgd => dmps_cli::config::default_svgd(),
        SamplerKind::Ula => dmps_cli::config::default_ula(),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { dataset, n, seed, dim, out } => {
            let x = dataset_spec(dataset, dim).generate(n, seed)?;
            write_csv(&out, &x)
        }
        Command::Fit { train, bandwidth, sigma_min, lambda_min, out } => {
            let train = read_csv(&train)?;
            let opts = FitOptions {
                bandwidth: bandwidth.map(Bandwidth::new).transpose()?,
                sigma_min,
                lambda_min: Some(lambda_min),
            };
            let model = DiffusionModel::fit(train, opts)?;
            eprintln!(
                "fitted eps = {:.6}, kept {} of {} modes",
                model.eps().value(),
                model.inverse().kept.len(),
                model.train().count()
            );
            model.save(&out)
        }
        Command::Sample {
            model,
            sampler,
            m,
            step_size,
            max_iters,
            tol,
            seed,
            init,
            lo,
            hi,
            init_file,
            snapshot_every,
            out,
            final_out,
        } => {
            let model = DiffusionModel::load(&model)?;
            let kind = match sampler {
                SamplerArg::Dmps => SamplerKind::Dmps,
                SamplerArg::Svgd => SamplerKind::Svgd,
                SamplerArg::Ula => SamplerKind::Ula,
            };
            let policy = match (init_file, init) {
                (Some(path), _) => InitPolicy::Explicit { points: read_csv(&path)? },
                (None, InitArg::SubsampleJitter) => InitPolicy::SubsampleJitter,
                (None, InitArg::UniformBox) => InitPolicy::UniformBox { lo, hi },
            };
            let base = default_sampler(kind);
            // The DMPS drift shrinks like 1/N, so its default step grows with N.
            let default_step = match kind {
                SamplerKind::Dmps => DMPS_STEP_PER_POINT * model.train().count() as f64,
                _ => base.step_size,
            };
            let cfg = SamplerConfig {
                step_size: step_size.unwrap_or(default_step),
                max_iters: max_iters.unwrap_or(base.max_iters),
                tol,
                seed,
                init: policy.clone(),
                snapshot_every,
            };
            let init = init_particles(
                &policy,
                m,
                model.dim(),
                dmps::seed::derive(seed, &[dmps::seed::INIT]),
                Some(model.train()),
                Some(model.eps()),
            )?;
            let traj = run_sampler(kind, &model, &init, &cfg)?;
            eprintln!("ran {} iterations (converged: {})", traj.iters_run, traj.converged);
            traj.write_csv(&out)?;
            if let Some(path) = final_out {
                write_csv(&path, traj.last())?;
            }
            Ok(())
        }
        Command::Evaluate { particles, reference, reg, max_iters, marginal_tol, squared, out } => {
            let cfg = OTConfig { reg, max_iters, marginal_tol, squared_cost: squared };
            let report = sinkhorn_distance(&read_csv(&particles)?, &read_csv(&reference)?, &cfg)?;
            let text = serde_json::to_string(&report).map_err(|e| Error::Format(e.to_string()))?;
            println!("{text}");
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            Ok(())
        }
        Command::Experiment { config, output_dir, trials, master_seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = master_seed {
                cfg.master_seed = s;
            }
            let rows = run_experiment(&cfg)?;
            let failed = rows.iter().filter(|r| !r.is_ok()).count();
            let cells = dmps_cli::summary::summarize(&rows)?;
            print!("{}", format_table(&cells));
            if failed > 0 {
                eprintln!("{failed} of {} runs failed; see {}", rows.len(), cfg.output_dir.join("results.csv").display());
            }
            Ok(())
        }
        Command::Summarize { results, out_dir } => {
            let rows = read_results(&results)?;
            let dir = out_dir.unwrap_or_else(|| {
                results.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
            });
            let cells = emit_summary(&rows, &dir)?;
            print!("{}", format_table(&cells));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(dmps_cli::exit_code(&e) as u8)
        }
    }
}
