use thiserror::Error;

/// Crate-wide error type. Variants map onto the failure classes the
/// individual subsystems can report.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },

    #[error("{axis} extent {extent} not divisible by pool size {pool} (truncation disabled)")]
    Divisibility {
        axis: &'static str,
        extent: usize,
        pool: usize,
    },

    #[error("shape error at layer {layer} ({kind}): {detail}")]
    Shape {
        layer: usize,
        kind: String,
        detail: String,
    },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("fusion error: {0}")]
    Fusion(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("WER undefined: empty reference")]
    UndefinedWer,

    #[error("malformed file: {0}")]
    Format(String),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }
}
