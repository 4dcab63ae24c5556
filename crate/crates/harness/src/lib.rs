//! Experiment harness for the Langevin samplers: JSON configuration, parallel
//! execution, validation subcommands and CSV/JSON/SVG reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod svg;

pub use commands::{CommonOptions, Outcome};
pub use config::{Experiment, ExperimentConfig, SamplerKind};
pub use error::{HarnessError, HarnessResult};
