//! Library surface of the `hglmm` command-line tool: model-spec parsing, CSV
//! ingestion, engineered feature construction, data splitting, the model
//! archive format, and the grid-search enumerator.

pub mod archive;
pub mod commands;
pub mod features;
pub mod ingest;
pub mod search;
pub mod spec;
pub mod split;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Error, Debug)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hglmm_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("data error: {0}")]
    Data(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("archive version {found} not supported (this build reads version {expected})")]
    ArchiveVersion { found: u32, expected: u32 },
}

impl CliError {
    /// Process exit code: 2 data, 3 convergence/fit, 4 usage.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(hglmm_core::Error::Data(_)) => 2,
            CliError::Core(hglmm_core::Error::Fit(_)) => 3,
            CliError::Core(hglmm_core::Error::Convergence { .. }) => 3,
            CliError::Core(hglmm_core::Error::Internal(_)) => 3,
            CliError::Core(hglmm_core::Error::Usage(_)) => 4,
            CliError::Io(_) => 2,
            CliError::Data(_) => 2,
            CliError::Usage(_) => 4,
            CliError::ArchiveVersion { .. } => 2,
        }
    }
}
