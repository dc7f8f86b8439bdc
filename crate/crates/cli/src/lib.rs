//! Reproducible experiment runs over the `roughwave` library: config
//! validation, the pipelines behind each subcommand, run reports and plot
//! data.

pub mod config;
pub mod error;
pub mod pipelines;
pub mod plot;
pub mod report;

pub use config::{ExperimentConfig, Validated};
pub use error::{CliError, CliResult};
pub use pipelines::Pipeline;
pub use report::{Check, RunReport};
