use thiserror::Error;

pub type Result<T> = std::result::Result<T, QuartsError>;

#[derive(Debug, Error)]
pub enum QuartsError {
    #[error(transparent)]
    Tensor(#[from] quarts_tensor::TensorError),
    #[error("data error: {0}")]
    Data(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("pipeline error in phase `{phase}`: {message}")]
    Pipeline { phase: String, message: String },
    /// Non-finite values or a failed gradient check.
    #[error("numeric check failed: {0}")]
    Numeric(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl QuartsError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        QuartsError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn pipeline(phase: &str, message: impl Into<String>) -> Self {
        QuartsError::Pipeline {
            phase: phase.to_string(),
            message: message.into(),
        }
    }
}
