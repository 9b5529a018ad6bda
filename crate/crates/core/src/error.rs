use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    /// Input data violates a documented invariant. `context` names the
    /// offending frame/record so the message is actionable on its own.
    #[error("{context}: {message}")]
    Invalid { context: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid raster: {0}")]
    Raster(String),

    /// Background point direction is undefined when the pixel coincides with
    /// its nearest head.
    #[error("background point is undefined: pixel coincides with its nearest head")]
    DegenerateBackground,

    #[error("frame has no head annotations")]
    NoAnnotations,

    #[error("posterior row {row} has zero total likelihood")]
    ZeroPosteriorRow { row: usize },

    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("{0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            context: context.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad input or configuration, as opposed to
    /// I/O or numerical failures at run time.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Json { .. }
                | Error::Csv(_)
                | Error::Invalid { .. }
                | Error::Shape(_)
                | Error::Raster(_)
                | Error::NoAnnotations
                | Error::Config(_)
        )
    }
}
