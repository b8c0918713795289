//! Experiment runner behind the `lab` binary: typed TOML configs per experiment kind,
//! CSV outputs with a JSON manifest, and a report step that merges manifests.

pub mod config;
pub mod manifest;
pub mod report;
pub mod runner;

pub use config::{ExperimentConfig, Kind};
pub use manifest::{digest64, Check, RunManifest, Table};
pub use report::{report, Summary};
pub use runner::run;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Lab { context: String, source: spde_lab::LabError },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Lab { source: spde_lab::LabError::Parameter(_), .. } => 2,
            _ => 1,
        }
    }
}

pub(crate) trait Context<T> {
    fn context(self, what: &str) -> Result<T, CliError>;
}

impl<T> Context<T> for spde_lab::Result<T> {
    fn context(self, what: &str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Lab { context: what.to_string(), source })
    }
}
