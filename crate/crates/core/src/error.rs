use std::path::PathBuf;

/// Every failure the library can report.
///
/// The CLI prints [`Error::class`] as a stable, machine-parseable prefix.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("streams are not synchronised: {0}")]
    Sync(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what} at byte {offset}: {message}")]
    Format {
        what: &'static str,
        offset: u64,
        message: String,
    },

    #[error("cannot load checkpoint: {0}")]
    Load(String),

    #[error(
        "non-finite loss on sequence {sequence} (ce={ce}, smoothing={smoothing}, midpoint={midpoint})"
    )]
    NonFinite {
        sequence: String,
        ce: f64,
        smoothing: f64,
        midpoint: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Usage(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short lowercase error class, e.g. `dimension` or `format`.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Parameter(_) => "parameter",
            Error::Contract(_) => "contract",
            Error::Data(_) => "data",
            Error::Sync(_) => "sync",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Load(_) => "load",
            Error::NonFinite { .. } => "nonfinite",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Usage(_) => "usage",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
