use std::path::PathBuf;
use std::process::ExitCode;

use thiserror::Error;

pub const EXIT_THRESHOLD: u8 = 1;
pub const EXIT_DOMAIN: u8 = 2;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_CONFIG: u8 = 65;
pub const EXIT_SOFTWARE: u8 = 70;
pub const EXIT_IO: u8 = 74;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] rbmp_core::Error),
    #[error("config {}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("{} threshold violation(s):\n  {}", .0.len(), .0.join("\n  "))]
    Thresholds(Vec<String>),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("writing csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("writing json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> ExitCode {
        use rbmp_core::Error as E;
        let code = match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Model(E::Domain(_) | E::Contract(_) | E::Infeasible(_)) => EXIT_DOMAIN,
            CliError::Model(E::Input(_)) => EXIT_USAGE,
            CliError::Model(E::Numeric(_)) => EXIT_SOFTWARE,
            CliError::Config { .. } => EXIT_CONFIG,
            CliError::Thresholds(_) => EXIT_THRESHOLD,
            CliError::Io { .. } | CliError::Csv(_) => EXIT_IO,
            CliError::Json(_) => EXIT_SOFTWARE,
        };
        ExitCode::from(code)
    }
}

pub type CliResult<T> = Result<T, CliError>;
