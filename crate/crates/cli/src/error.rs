// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

/// Process exit code for malformed invocations and invalid configuration.
pub const EXIT_USAGE: i32 = 1;
/// Process exit code for bad or inconsistent input data.
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] attnscope_core::Error),
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(attnscope_core::Error::Config(_)) => EXIT_USAGE,
            _ => EXIT_DATA,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
