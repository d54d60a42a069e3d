use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `p_M == p_S` leaves nothing to resample from; rejection cannot happen.
    #[error("degenerate residual: target and draft distributions are identical")]
    DegenerateResidual,

    #[error("capacity exceeded: {requested} tokens requested, capacity is {capacity}")]
    CapacityExceeded { requested: usize, capacity: usize },

    #[error("oracle refused instance: {cells} candidate cells exceeds limit {limit}")]
    OracleSizeExceeded { cells: usize, limit: usize },

    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("malformed config at line {line}, column {column}: {message}")]
    MalformedConfig {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid_config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-supplied configuration rather than
    /// runtime failures.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig { .. } | Error::MalformedConfig { .. } | Error::OracleSizeExceeded { .. }
        )
    }
}
