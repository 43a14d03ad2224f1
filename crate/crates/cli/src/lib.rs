//! Study harness for sequential calibration runs: configuration, replicated
//! studies and plot-ready CSV outputs.

pub mod cli;
pub mod config;
pub mod output;
pub mod study;

pub use cli::{run, Cli, Command};
pub use config::{ExtractionChoice, Resolved, StudyConfig, TargetMode};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("simulator error: {0}")]
    Simulator(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Output(_) => 2,
            Self::Simulator(_) => 3,
            Self::Numerical(_) => 4,
        }
    }
}

impl From<dyncal::Error> for CliError {
    fn from(e: dyncal::Error) -> Self {
        use dyncal::Error as E;
        match e {
            E::Simulator { .. } => Self::Simulator(e.to_string()),
            E::FactorizationFailure { .. } | E::Domain(_) | E::NoBracket { .. } => Self::Numerical(e.to_string()),
            E::InvalidInput(_) | E::Format(_) => Self::Config(e.to_string()),
            E::Io(_) | E::Csv(_) | E::Json(_) => Self::Output(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Output(e.to_string())
    }
}
