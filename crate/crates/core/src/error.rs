use thiserror::Error;

/// Errors raised by the simulator and optimizer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("correlation model error: {0}")]
    Model(String),

    #[error("invalid surface state: {0}")]
    InvalidState(String),

    #[error("infeasible amplifier constraint at element {element}: upper bound {bound} < 1")]
    Infeasible { element: usize, bound: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("placement failed after {0} retries")]
    Placement(usize),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
