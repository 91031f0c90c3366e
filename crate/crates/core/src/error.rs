use std::io;

/// Errors raised anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A byte stream or file did not follow the expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// Input violated a domain precondition or invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step} (run {run}): loss = {loss}")]
    Diverged { run: u32, step: usize, loss: f64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for this error: 2 for file-format problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format(_) | Error::Json(_) | Error::Io { .. } => 2,
            Error::Validation(_) | Error::Diverged { .. } => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
