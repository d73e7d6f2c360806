//! Experiment harness: configuration, batch runs, and summaries.

pub mod config;
pub mod experiment;
pub mod summary;

pub use config::{ExperimentConfig, FitSettings, ParticleCounts, SamplerKind};
pub use experiment::{run_experiment, run_trial_cell, ResultRow};
pub use summary::{emit_summary, summarize, SummaryCell};

use dmps::Error;

/// Process exit code for an error: 1 for bad input, 2 for numerical failure.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        2
    } else {
        1
    }
}
