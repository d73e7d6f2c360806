//! Diffusion map particle systems.
//!
//! Learns the Langevin generator of a target distribution from samples via
//! diffusion maps and transports particle ensembles towards it with
//! Laplacian-adjusted Wasserstein gradient descent. SVGD and ULA baselines,
//! entropic OT evaluation and synthetic datasets are included for
//! benchmarking.

pub mod datasets;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod model;
pub mod sample;
pub mod samplers;
pub mod seed;
pub mod spectral;

pub use datasets::{DatasetSpec, InitPolicy};
pub use error::{Error, Result};
pub use eval::{OTConfig, OTReport};
pub use kernel::{Bandwidth, KernelBundle, KernelGradientBundle};
pub use model::{DiffusionModel, FitOptions};
pub use sample::SampleMatrix;
pub use samplers::{SamplerConfig, Trajectory};
pub use spectral::{InverseSpectrum, Spectrum};
