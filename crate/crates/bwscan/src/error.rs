use std::path::{Path, PathBuf};

/// Process exit codes. These are a stable contract for scripts.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const SIMULATION: i32 = 3;
    pub const INSUFFICIENT_DATA: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// An input outside a function's domain, such as a cluster size of 0.
    #[error("{0}")]
    Domain(#[from] bwscan_core::Error),
    #[error("simulation failed: {0}")]
    Simulation(bwscan_core::Error),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } | CliError::Io { .. } | CliError::Domain(_) => exit::USAGE,
            CliError::Simulation(_) => exit::SIMULATION,
            CliError::InsufficientData(_) => exit::INSUFFICIENT_DATA,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

pub type CliResult<T> = Result<T, CliError>;
