use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed on-disk data. `field` names the offending part of the format.
    #[error("format error in {field}: {msg}")]
    Format { field: &'static str, msg: String },

    #[error("input error: {0}")]
    Input(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("stream error: {0}")]
    Stream(#[source] std::io::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(field: &'static str, msg: impl Into<String>) -> Self {
        Error::Format { field, msg: msg.into() }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
