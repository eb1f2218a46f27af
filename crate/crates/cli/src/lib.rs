//! Command-line front end: run configuration, training of column sets,
//! evaluation of models and manifests, and dataset utilities.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::CliError;
