use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes. Usage errors (unknown flag, bad value) exit with 2
/// from the argument parser before any stage runs.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const MISSING_INPUT: i32 = 4;
    pub const BAD_INPUT: i32 = 5;
    pub const DIVERGED: i32 = 6;
    pub const FETCH_INCOMPLETE: i32 = 7;
    pub const OUTPUT: i32 = 8;
    pub const SERVICE: i32 = 9;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{} not found ({what})", path.display())]
    MissingInput { path: PathBuf, what: &'static str },

    #[error("{0}")]
    BadInput(String),

    #[error("training diverged at epoch {epoch}, step {step} (loss {loss}); lower the learning rate")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("{failed} of {requested} tiles could not be fetched; see {}", report.display())]
    FetchIncomplete {
        failed: usize,
        requested: usize,
        report: PathBuf,
    },

    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("review service: {0}")]
    Service(String),

    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::MissingInput { .. } => exit::MISSING_INPUT,
            CliError::BadInput(_) => exit::BAD_INPUT,
            CliError::Diverged { .. } => exit::DIVERGED,
            CliError::FetchIncomplete { .. } => exit::FETCH_INCOMPLETE,
            CliError::Output { .. } => exit::OUTPUT,
            CliError::Service(_) => exit::SERVICE,
            CliError::Internal(_) => exit::INTERNAL,
        }
    }

    /// Short machine-readable tag used in the stderr diagnostic.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingInput { .. } => "missing_input",
            CliError::BadInput(_) => "bad_input",
            CliError::Diverged { .. } => "diverged",
            CliError::FetchIncomplete { .. } => "fetch_incomplete",
            CliError::Output { .. } => "output",
            CliError::Service(_) => "service",
            CliError::Internal(_) => "internal",
        }
    }

    pub(crate) fn output(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Output {
            path: path.into(),
            source,
        }
    }
}

impl From<germap_core::Error> for CliError {
    fn from(e: germap_core::Error) -> Self {
        use germap_core::Error as E;
        match e {
            E::Diverged { epoch, step, loss } => CliError::Diverged { epoch, step, loss },
            E::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => CliError::MissingInput {
                path,
                what: "file",
            },
            other => CliError::BadInput(other.to_string()),
        }
    }
}

impl From<germap_ingest::IngestError> for CliError {
    fn from(e: germap_ingest::IngestError) -> Self {
        use germap_ingest::IngestError as E;
        match e {
            E::Core(c) => c.into(),
            E::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => CliError::MissingInput {
                path,
                what: "file",
            },
            E::Source(s) => CliError::Config(s),
            other => CliError::BadInput(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
