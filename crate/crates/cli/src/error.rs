use std::fmt;
use std::path::Path;

use batchstate::Error;

/// Exit codes: 1 I/O and other failures, 2 usage and validation, 3
/// dimension mismatch, 4 unobservable model, 5 a cell where every trial
/// failed.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
    File {
        path: String,
        source: std::io::Error,
    },
    AllTrialsFailed(String),
}

impl CliError {
    pub fn file(path: &Path, source: std::io::Error) -> Self {
        CliError::File {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                Error::InvalidArgument(_) | Error::Parse(_) => 2,
                Error::DimensionMismatch { .. } => 3,
                Error::NotObservableOrIllConditioned { .. } | Error::RankDeficient { .. } => 4,
                _ => 1,
            },
            CliError::File { .. } => 1,
            CliError::AllTrialsFailed(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::File { path, source } => write!(f, "{path}: {source}"),
            CliError::AllTrialsFailed(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}
