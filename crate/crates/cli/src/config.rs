//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use dmps::datasets::DatasetSpec;
use dmps::eval::OTConfig;
use dmps::kernel::Bandwidth;
use dmps::model::FitOptions;
use dmps::samplers::SamplerConfig;
use dmps::{Error, InitPolicy, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Dmps,
    Svgd,
    Ula,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 3] = [SamplerKind::Dmps, SamplerKind::Svgd, SamplerKind::Ula];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Dmps => "dmps",
            SamplerKind::Svgd => "svgd",
            SamplerKind::Ula => "ula",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dmps" => Ok(SamplerKind::Dmps),
            "svgd" => Ok(SamplerKind::Svgd),
            "ula" => Ok(SamplerKind::Ula),
            other => Err(Error::invalid(format!("unknown sampler {other:?}"))),
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

/// A single particle count or a list of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParticleCounts {
    One(usize),
    Many(Vec<usize>),
}

impl ParticleCounts {
    pub fn to_vec(&self) -> Vec<usize> {
        match self {
            ParticleCounts::One(m) => vec![*m],
            ParticleCounts::Many(v) => v.clone(),
        }
    }
}

/// Diffusion-map fit options as they appear in the config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    /// Median heuristic when absent.
    pub bandwidth: Option<f64>,
    /// `1e-8 / eps` when absent.
    pub sigma_min: Option<f64>,
    pub lambda_min: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            bandwidth: None,
            sigma_min: None,
            lambda_min: 1e-3,
        }
    }
}

impl FitSettings {
    pub fn options(&self) -> Result<FitOptions> {
        Ok(FitOptions {
            bandwidth: self.bandwidth.map(Bandwidth::new).transpose()?,
            sigma_min: self.sigma_min,
            lambda_min: Some(self.lambda_min),
        })
    }
}

pub fn default_dmps() -> SamplerConfig {
    SamplerConfig {
        step_size: 50.0,
        max_iters: 500,
        ..SamplerConfig::default()
    }
}

pub fn default_svgd() -> SamplerConfig {
    SamplerConfig {
        step_size: 0.05,
        max_iters: 500,
        ..SamplerConfig::default()
    }
}

pub fn default_ula() -> SamplerConfig {
    SamplerConfig {
        step_size: 1e-3,
        max_iters: 1000,
        ..SamplerConfig::default()
    }
}

/// Parse a partial sampler table on top of that sampler's own defaults.
fn overlay<'de, D: serde::Deserializer<'de>>(
    base: SamplerConfig,
    de: D,
) -> std::result::Result<SamplerConfig, D::Error> {
    use serde::de::Error as _;
    let patch = toml::Table::deserialize(de)?;
    let mut table = toml::Table::try_from(base).map_err(D::Error::custom)?;
    table.extend(patch);
    table.try_into().map_err(D::Error::custom)
}

fn overlay_dmps<'de, D: serde::Deserializer<'de>>(de: D) -> std::result::Result<SamplerConfig, D::Error> {
    overlay(default_dmps(), de)
}

fn overlay_svgd<'de, D: serde::Deserializer<'de>>(de: D) -> std::result::Result<SamplerConfig, D::Error> {
    overlay(default_svgd(), de)
}

fn overlay_ula<'de, D: serde::Deserializer<'de>>(de: D) -> std::result::Result<SamplerConfig, D::Error> {
    overlay(default_ula(), de)
}

fn default_samplers() -> Vec<SamplerKind> {
    SamplerKind::ALL.to_vec()
}

fn default_reference() -> usize {
    20_000
}

fn default_trials() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub n_train: usize,
    pub m_particles: ParticleCounts,
    #[serde(default = "default_reference")]
    pub n_reference: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_samplers")]
    pub samplers: Vec<SamplerKind>,
    /// Particle initialization shared by every sampler in a cell.
    #[serde(default)]
    pub init: InitPolicy,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub fit: FitSettings,
    /// Seeds in the sampler sections are ignored; every draw is derived
    /// from `master_seed`.
    #[serde(default = "default_dmps", deserialize_with = "overlay_dmps")]
    pub dmps: SamplerConfig,
    #[serde(default = "default_svgd", deserialize_with = "overlay_svgd")]
    pub svgd: SamplerConfig,
    #[serde(default = "default_ula", deserialize_with = "overlay_ula")]
    pub ula: SamplerConfig,
    #[serde(default)]
    pub ot: OTConfig,
    /// Write each run's final particles to `particles/`.
    #[serde(default)]
    pub save_particles: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Full config with every default filled in.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if self.n_train < 2 || self.n_reference == 0 {
            return Err(Error::invalid("n_train must be at least 2 and n_reference positive"));
        }
        let ms = self.m_particles.to_vec();
        if ms.is_empty() || ms.contains(&0) {
            return Err(Error::invalid("m_particles entries must be positive"));
        }
        if self.samplers.is_empty() {
            return Err(Error::invalid("at least one sampler is required"));
        }
        for kind in &self.samplers {
            self.sampler(*kind).validate()?;
        }
        self.fit.options()?;
        self.ot.validate()
    }

    pub fn sampler(&self, kind: SamplerKind) -> &SamplerConfig {
        match kind {
            SamplerKind::Dmps => &self.dmps,
            SamplerKind::Svgd => &self.svgd,
            SamplerKind::Ula => &self.ula,
        }
    }

    pub fn particle_counts(&self) -> Vec<usize> {
        self.m_particles.to_vec()
    }
}

/// Seed of the noise stream for one sampler run.
pub fn sampler_seed(master: u64, trial: usize, m: usize, kind: SamplerKind) -> u64 {
    dmps::seed::derive(master, &[trial as u64, dmps::seed::SAMPLER, m as u64, kind.index()])
}
