//! Experiment harness around `prunelab-core`: dataset loading (synthetic
//! blobs, IDX, CSV), TOML experiment configs, a resumable grid runner,
//! CSV/markdown reports, ticket and checkpoint files, and the CLI.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod files;
pub mod idx;
pub mod report;
pub mod runner;

pub use config::ExperimentConfig;
pub use dataset::{load_dataset, DataSource, Split};
pub use error::{LabError, Result};
pub use report::ResultRow;
pub use runner::{run_experiment, RunOptions, RunReport};
