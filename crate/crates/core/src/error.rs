use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid model definition or configuration (unknown column, bad option).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates a dataset invariant. `location` names the line or chooser.
    #[error("data validation error at {location}: {message}")]
    DataValidation { location: String, message: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    Dimension {
        what: String,
        expected: usize,
        actual: usize,
    },

    /// Numerical failure while evaluating the model for a chooser.
    #[error("evaluation error for chooser {chooser}: {message}")]
    Evaluation { chooser: String, message: String },

    /// The observed information cannot be inverted.
    #[error("observed information is singular (smallest eigenvalue {eigenvalue:.3e}); near-null direction dominated by {direction}")]
    Singular { direction: String, eigenvalue: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub fn validation(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::DataValidation {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn dimension(what: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            what: what.into(),
            expected,
            actual,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
