//! Config-driven experiment runner on top of [`rrsgd`].
//!
//! A run reads an [`ExperimentConfig`], executes the trials, and writes
//! `config.json` plus CSV outputs into one directory per run.

pub mod config;
mod error;
pub mod experiments;
pub mod stats;

pub use config::{apply_override, Basin, ExperimentConfig, ExperimentId, MethodName};
pub use error::{HarnessError, Result};
pub use experiments::{default_out_dir, run_experiment, RunReport, TrialSummary};
