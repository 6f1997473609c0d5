use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scene generation exhausted after {attempts} attempts ({context})")]
    GenerationExhausted { attempts: usize, context: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("no path between start and goal")]
    NoPath,

    #[error("region mask excludes the start or goal cell")]
    RegionExcludesEndpoints,

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("incompatible architecture: {0}")]
    IncompatibleArchitecture(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    DivergenceDetected { epoch: usize, loss: f64 },

    #[error("scene is unsolvable on the full grid")]
    NoPathAnywhere,

    #[error("restricted search failed and fallback is disabled")]
    MaskFailed,

    #[error("malformed image: {0}")]
    MalformedImage(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("checksum mismatch for {path}: manifest has {expected}, file has {actual}")]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("report inconsistency: {0}")]
    Report(String),

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True for errors caused by bad user input (configs, schemas, arguments)
    /// rather than by a failure while running.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidParameter(_) | Error::Json(_)
        )
    }
}
