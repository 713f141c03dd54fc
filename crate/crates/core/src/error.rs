use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped so that a front end can map them onto stable exit
/// codes: configuration problems, bad input data, and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("stratification error: class {class} has {count} samples, need at least 3")]
    Stratification { class: usize, count: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("weight error: class {class} has zero samples")]
    Weight { class: usize },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("training error at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("non-finite gradient in {layer}")]
    NonFiniteGradient { layer: String },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Broad category used to pick a process exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Shape(_) => ErrorKind::Config,
            Error::Stratification { .. }
            | Error::Fit(_)
            | Error::Weight { .. }
            | Error::Input(_)
            | Error::Metric(_)
            | Error::Data(_)
            | Error::Io(_)
            | Error::Json(_) => ErrorKind::Data,
            Error::Training { .. } | Error::NonFiniteGradient { .. } => ErrorKind::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
