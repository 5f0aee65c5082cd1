use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LdbError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LdbError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("layer {layer}: {message}")]
    Layer { layer: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("measurement error: {0}")]
    Measurement(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LdbError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LdbError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 0 success, 2 configuration, 3 divergence, 4 IO. Data and format
    /// errors come from user-supplied files and are reported as IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            LdbError::Config(_) | LdbError::Shape { .. } | LdbError::Layer { .. } => 2,
            LdbError::Diverged { .. } => 3,
            LdbError::Io { .. } | LdbError::Data(_) | LdbError::Format { .. } => 4,
            LdbError::Measurement(_) => 1,
        }
    }
}
