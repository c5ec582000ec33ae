use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] prunesim_core::Error),

    #[error("trace invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 for bad configuration, 3 for non-finite numerics,
    /// 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        use prunesim_core::Error as E;
        match self {
            HarnessError::Config(_) | HarnessError::Json(_) => 2,
            HarnessError::Core(e) => match e {
                E::NonFinite(_) => 3,
                E::InvalidConfig(_)
                | E::UnreachableRatio(_)
                | E::EmptyPrompt
                | E::TokenOutOfRange { .. }
                | E::CacheOverflow { .. }
                | E::Format(_)
                | E::Json(_) => 2,
                _ => 1,
            },
            _ => 1,
        }
    }
}
