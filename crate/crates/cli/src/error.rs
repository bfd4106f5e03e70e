use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config entries or values; reported with usage, exit 2.
    #[error("{0}")]
    Usage(String),
    /// A pipeline stage failed; exit 1.
    #[error("{module}: {source}")]
    Runtime {
        module: &'static str,
        #[source]
        source: cpls_core::Error,
    },
    /// A check ran but did not meet its threshold; exit 1.
    #[error("{module}: {message}")]
    Failed { module: &'static str, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("metadata: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// Tags a core error with the stage that produced it. Argument errors raised
/// while validating inputs are usage errors.
pub trait Stage<T> {
    fn stage(self, module: &'static str) -> Result<T, CliError>;
}

impl<T> Stage<T> for cpls_core::Result<T> {
    fn stage(self, module: &'static str) -> Result<T, CliError> {
        self.map_err(|source| match source {
            cpls_core::Error::InvalidArgument(msg) => CliError::Usage(msg),
            source => CliError::Runtime { module, source },
        })
    }
}
