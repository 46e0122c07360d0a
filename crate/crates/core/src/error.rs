use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("line {line}: rejected record: {reason}")]
    RejectedRecord { line: usize, reason: String },

    #[error("trace contains no valid records")]
    EmptyTrace,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("split point {train_count} out of range for a trace of {len} records")]
    SplitOutOfRange { train_count: usize, len: usize },

    #[error("feature dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("unknown datum at block address {0}")]
    UnknownDatum(u64),

    #[error("block address {0} does not resolve to any chunk")]
    UnresolvedDatum(u64),

    #[error("policy {0} requires a grouping")]
    MissingGrouping(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the input data rather than configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::RejectedRecord { .. }
                | Error::EmptyTrace
                | Error::Io { .. }
                | Error::UnknownDatum(_)
                | Error::UnresolvedDatum(_)
        )
    }
}
