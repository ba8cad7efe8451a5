use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform for the named operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// An operation produced NaN or infinity from its inputs.
    #[error("numeric error in {op}: non-finite value produced")]
    Numeric { op: &'static str },

    /// A caller violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Checkpoint or sidecar file could not be interpreted.
    #[error("format error{}: {message}", .param.as_ref().map(|p| format!(" (parameter `{p}`)")).unwrap_or_default())]
    Format {
        param: Option<String>,
        message: String,
    },

    #[error("validation error{}: {message}", .line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Validation {
        line: Option<usize>,
        message: String,
    },

    #[error("I/O error on {path}{}: {source}", .context.as_ref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Io {
        path: PathBuf,
        context: Option<String>,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path} ({context}): {message}")]
    Image {
        path: PathBuf,
        context: String,
        message: String,
    },

    /// External codec invocation failed.
    #[error("codec adapter error: {0}")]
    Adapter(String),

    /// Training diverged.
    #[error("training aborted at step {step} (lr {lr:e}, batch {batch_ids:?}): {reason}")]
    Diverged {
        step: usize,
        lr: f64,
        batch_ids: Vec<String>,
        reason: String,
    },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn format(param: Option<&str>, message: impl Into<String>) -> Self {
        Error::Format {
            param: param.map(str::to_owned),
            message: message.into(),
        }
    }

    pub fn validation(line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Validation {
            line,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            context: None,
            source,
        }
    }
}
