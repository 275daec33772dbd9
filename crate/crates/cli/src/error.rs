use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failures of a command. [`CliError::exit_code`] maps them to the
/// process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{}:{line}: {msg}", path.display())]
    Schema { path: PathBuf, line: u64, msg: String },

    #[error("{}: {msg}", path.display())]
    Io { path: PathBuf, msg: String },

    #[error("{}:{line}: timestamp {t} precedes {previous} on the previous row", path.display())]
    Regression {
        path: PathBuf,
        line: u64,
        t: f64,
        previous: f64,
    },

    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn schema(path: &Path, line: u64, msg: String) -> Self {
        CliError::Schema {
            path: path.to_path_buf(),
            line,
            msg,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            msg: e.to_string(),
        }
    }

    /// 1 for bad configuration or input, 2 for divergence or a timestamp
    /// regression.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Schema { .. } | CliError::Io { .. } => 1,
            CliError::Regression { .. } | CliError::Diverged(_) => 2,
        }
    }
}

impl From<legged_inekf::Error> for CliError {
    fn from(e: legged_inekf::Error) -> Self {
        match e {
            legged_inekf::Error::Diverged { .. } => CliError::Diverged(e.to_string()),
            e => CliError::Config(e.to_string()),
        }
    }
}
